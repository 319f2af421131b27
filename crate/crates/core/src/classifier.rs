//! Forget/retain prompt classifier: a one-hidden-layer MLP over pooled prompt
//! embeddings, trained full-batch with inverse-frequency class weights.
//!
//! Forward pipeline: linear → ReLU → dropout (training only) → LayerNorm →
//! linear → softmax. Output index 0 is the retain class, index 1 forget.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::text::fnv1a;
use crate::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Retain = 0,
    Forget = 1,
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Retain),
            1 => Ok(Label::Forget),
            other => Err(format!("label must be 0 or 1, found {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

/// Routing decision for a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Forget,
    Retain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEmbedding {
    pub vector: Embedding,
    pub label: Label,
}

/// Parses labeled-embedding JSONL (`vector`, `label`). All vectors must be
/// finite and share one dimension.
pub fn parse_labeled_jsonl(text: &str, source_name: &str) -> Result<Vec<LabeledEmbedding>> {
    let mut out: Vec<LabeledEmbedding> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |m: String| Error::parse(source_name, lineno + 1, m);
        let item: LabeledEmbedding = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
        if item.vector.dim() == 0 || !item.vector.is_finite() {
            return Err(at("vector must be non-empty and finite".into()));
        }
        if let Some(first) = out.first() {
            if first.vector.dim() != item.vector.dim() {
                return Err(at(format!(
                    "vector dimension {} differs from {}",
                    item.vector.dim(),
                    first.vector.dim()
                )));
            }
        }
        out.push(item);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub decision_threshold: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden_dim: 128,
            learning_rate: 1e-3,
            epochs: 200,
            dropout_rate: 0.1,
            decision_threshold: 0.5,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::invalid("hidden_dim must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate must lie in [0, 1)"));
        }
        check_threshold(self.decision_threshold)
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("decision threshold {t} outside (0, 1)")))
    }
}

/// MLP weights. Matrices are row-major: `hidden_weight` is
/// `hidden_dim × input_dim`, `output_weight` is `2 × hidden_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpParameters {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub hidden_weight: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub layernorm_gain: Vec<f64>,
    pub layernorm_bias: Vec<f64>,
    pub output_weight: Vec<f64>,
    pub output_bias: Vec<f64>,
    pub dropout_rate: f64,
}

struct Activations {
    pre: Vec<f64>,
    keep: Vec<f64>,
    normalized: Vec<f64>,
    inv_std: f64,
    post: Vec<f64>,
    probs: [f64; 2],
}

impl MlpParameters {
    /// Glorot-uniform weights, zero biases, unit LayerNorm gain.
    pub fn init(input_dim: usize, hidden_dim: usize, dropout_rate: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, fan_in: usize, fan_out: usize| -> Vec<f64> {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-limit..limit)).collect()
        };
        let hidden_weight = uniform(hidden_dim * input_dim, input_dim, hidden_dim);
        let output_weight = uniform(2 * hidden_dim, hidden_dim, 2);
        Ok(MlpParameters {
            input_dim,
            hidden_dim,
            hidden_weight,
            hidden_bias: vec![0.0; hidden_dim],
            layernorm_gain: vec![1.0; hidden_dim],
            layernorm_bias: vec![0.0; hidden_dim],
            output_weight,
            output_bias: vec![0.0; 2],
            dropout_rate,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let shapes = [
            ("hidden_weight", self.hidden_weight.len(), h * d),
            ("hidden_bias", self.hidden_bias.len(), h),
            ("layernorm_gain", self.layernorm_gain.len(), h),
            ("layernorm_bias", self.layernorm_bias.len(), h),
            ("output_weight", self.output_weight.len(), 2 * h),
            ("output_bias", self.output_bias.len(), 2),
        ];
        if d == 0 || h == 0 {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::invalid(format!("{name} has {got} entries, expected {want}")));
            }
        }
        if self.fields().iter().any(|f| f.iter().any(|x| !x.is_finite())) {
            return Err(Error::invalid("parameters must be finite"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: MlpParameters = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn fields(&self) -> [&[f64]; 6] {
        [
            &self.hidden_weight,
            &self.hidden_bias,
            &self.layernorm_gain,
            &self.layernorm_bias,
            &self.output_weight,
            &self.output_bias,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.hidden_weight,
            &mut self.hidden_bias,
            &mut self.layernorm_gain,
            &mut self.layernorm_bias,
            &mut self.output_weight,
            &mut self.output_bias,
        ]
    }

    /// All trainable values in a fixed order.
    pub fn flatten(&self) -> Vec<f64> {
        self.fields().concat()
    }

    /// Inverse of [`flatten`](Self::flatten) for a parameter set of the same shape.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.fields().iter().map(|f| f.len()).sum();
        if flat.len() != total {
            return Err(Error::invalid(format!("expected {total} values, found {}", flat.len())));
        }
        let mut offset = 0;
        for field in self.fields_mut() {
            let n = field.len();
            field.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        for field in g.fields_mut() {
            field.iter_mut().for_each(|x| *x = 0.0);
        }
        g
    }

    fn dropout_keep(&self, training_key: Option<u64>) -> Vec<f64> {
        let h = self.hidden_dim;
        match training_key {
            Some(key) if self.dropout_rate > 0.0 => {
                let scale = 1.0 / (1.0 - self.dropout_rate);
                let mut rng = ChaCha8Rng::seed_from_u64(key);
                (0..h)
                    .map(|_| if rng.random::<f64>() < self.dropout_rate { 0.0 } else { scale })
                    .collect()
            }
            _ => vec![1.0; h],
        }
    }

    fn activations(&self, z: &[f64], training_key: Option<u64>) -> Activations {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let pre: Vec<f64> = (0..h)
            .map(|i| {
                let row = &self.hidden_weight[i * d..(i + 1) * d];
                row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + self.hidden_bias[i]
            })
            .collect();
        let keep = self.dropout_keep(training_key);
        let dropped: Vec<f64> = pre.iter().zip(&keep).map(|(a, k)| a.max(0.0) * k).collect();
        let mean = dropped.iter().sum::<f64>() / h as f64;
        let var = dropped.iter().map(|u| (u - mean) * (u - mean)).sum::<f64>() / h as f64;
        let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let normalized: Vec<f64> = dropped.iter().map(|u| (u - mean) * inv_std).collect();
        let post: Vec<f64> = normalized
            .iter()
            .zip(self.layernorm_gain.iter().zip(&self.layernorm_bias))
            .map(|(x, (g, b))| g * x + b)
            .collect();
        let logits = [0, 1].map(|c| {
            let row = &self.output_weight[c * h..(c + 1) * h];
            row.iter().zip(&post).map(|(w, y)| w * y).sum::<f64>() + self.output_bias[c]
        });
        Activations {
            pre,
            keep,
            normalized,
            inv_std,
            post,
            probs: softmax2(logits),
        }
    }

    /// `(p_retain, p_forget)` for embedding `z`. `training_key` enables dropout
    /// with a mask drawn from that key; `None` is inference mode.
    pub fn forward(&self, z: &Embedding, training_key: Option<u64>) -> Result<[f64; 2]> {
        self.check_dim(z)?;
        Ok(self.activations(&z.0, training_key).probs)
    }

    fn check_dim(&self, z: &Embedding) -> Result<()> {
        if z.dim() != self.input_dim {
            return Err(Error::invalid(format!(
                "embedding dimension {} does not match classifier input {}",
                z.dim(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Forget iff `p_forget >= threshold`.
    pub fn classify(&self, z: &Embedding, threshold: f64) -> Result<Route> {
        check_threshold(threshold)?;
        let [_, p_forget] = self.forward(z, None)?;
        Ok(route_for(p_forget, threshold))
    }
}

fn route_for(p_forget: f64, threshold: f64) -> Route {
    if p_forget >= threshold {
        Route::Forget
    } else {
        Route::Retain
    }
}

/// Numerically stable two-way softmax.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e = logits.map(|l| (l - m).exp());
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

/// Inverse-frequency weights `N / (2 N_c)`, indexed by label value.
pub fn class_weights(data: &[LabeledEmbedding]) -> Result<[f64; 2]> {
    let n = data.len() as f64;
    let forget = data.iter().filter(|x| x.label == Label::Forget).count();
    let retain = data.len() - forget;
    if forget == 0 || retain == 0 {
        return Err(Error::invalid("training data must contain both forget and retain examples"));
    }
    Ok([n / (2.0 * retain as f64), n / (2.0 * forget as f64)])
}

/// Dropout key for one example in one epoch. Depends on the example's
/// content, so duplicated examples draw identical masks.
fn dropout_key(seed: u64, epoch: u64, z: &[f64]) -> u64 {
    let bytes: Vec<u8> = z.iter().flat_map(|x| x.to_bits().to_le_bytes()).collect();
    fnv1a(&bytes) ^ seed.rotate_left(17) ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Class-weighted mean cross-entropy and its gradient.
///
/// `dropout` is `Some((seed, epoch))` to apply the training-mode masks of
/// that epoch, or `None` for inference mode.
pub fn loss_and_gradient(
    params: &MlpParameters,
    data: &[LabeledEmbedding],
    weights: [f64; 2],
    dropout: Option<(u64, u64)>,
) -> Result<(f64, MlpParameters)> {
    let (d, h) = (params.input_dim, params.hidden_dim);
    let n = data.len() as f64;
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    for ex in data {
        params.check_dim(&ex.vector)?;
        let z = &ex.vector.0;
        let key = dropout.map(|(seed, epoch)| dropout_key(seed, epoch, z));
        let act = params.activations(z, key);
        let y = ex.label as usize;
        let w = weights[y] / n;
        loss -= w * act.probs[y].max(f64::MIN_POSITIVE).ln();

        let dlogits = [0, 1].map(|c| w * (act.probs[c] - if c == y { 1.0 } else { 0.0 }));
        let mut dpost = vec![0.0; h];
        for c in 0..2 {
            grad.output_bias[c] += dlogits[c];
            for i in 0..h {
                grad.output_weight[c * h + i] += dlogits[c] * act.post[i];
                dpost[i] += dlogits[c] * params.output_weight[c * h + i];
            }
        }
        let mut dnorm = vec![0.0; h];
        for i in 0..h {
            grad.layernorm_gain[i] += dpost[i] * act.normalized[i];
            grad.layernorm_bias[i] += dpost[i];
            dnorm[i] = dpost[i] * params.layernorm_gain[i];
        }
        let mean_d = dnorm.iter().sum::<f64>() / h as f64;
        let mean_dx = dnorm.iter().zip(&act.normalized).map(|(a, b)| a * b).sum::<f64>() / h as f64;
        for i in 0..h {
            let du = act.inv_std * (dnorm[i] - mean_d - act.normalized[i] * mean_dx);
            let da = if act.pre[i] > 0.0 { du * act.keep[i] } else { 0.0 };
            if da != 0.0 {
                grad.hidden_bias[i] += da;
                for j in 0..d {
                    grad.hidden_weight[i * d + j] += da * z[j];
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Full-batch gradient descent from a seeded initialization.
pub fn train(data: &[LabeledEmbedding], cfg: &ClassifierConfig) -> Result<MlpParameters> {
    cfg.validate()?;
    let first = data.first().ok_or_else(|| Error::invalid("training data is empty"))?;
    let dim = first.vector.dim();
    if data.iter().any(|x| x.vector.dim() != dim) {
        return Err(Error::invalid("training vectors have differing dimensions"));
    }
    let weights = class_weights(data)?;
    let mut params = MlpParameters::init(dim, cfg.hidden_dim, cfg.dropout_rate, cfg.seed)?;
    for epoch in 0..cfg.epochs as u64 {
        let (_, grad) = loss_and_gradient(&params, data, weights, Some((cfg.seed, epoch)))?;
        let lr = cfg.learning_rate;
        for (p, g) in params.fields_mut().into_iter().zip(grad.fields()) {
            for (x, dx) in p.iter_mut().zip(g) {
                *x -= lr * dx;
            }
        }
    }
    Ok(params)
}

/// Confusion counts and the derived error rates. A rate is `None` when its
/// denominator class is absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub true_positive: usize,
    pub false_negative: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub fnr: Option<f64>,
    pub fpr: Option<f64>,
}

impl Rates {
    pub fn from_counts(tp: usize, fn_: usize, fp: usize, tn: usize) -> Self {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        Rates {
            true_positive: tp,
            false_negative: fn_,
            false_positive: fp,
            true_negative: tn,
            fnr: ratio(fn_, fn_ + tp),
            fpr: ratio(fp, fp + tn),
        }
    }
}

/// False-negative and false-positive rates, forget being the positive class.
pub fn evaluate_rates(params: &MlpParameters, data: &[LabeledEmbedding], threshold: f64) -> Result<Rates> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation data is empty"));
    }
    let (mut tp, mut fn_, mut fp, mut tn) = (0, 0, 0, 0);
    for ex in data {
        match (ex.label, params.classify(&ex.vector, threshold)?) {
            (Label::Forget, Route::Forget) => tp += 1,
            (Label::Forget, Route::Retain) => fn_ += 1,
            (Label::Retain, Route::Forget) => fp += 1,
            (Label::Retain, Route::Retain) => tn += 1,
        }
    }
    Ok(Rates::from_counts(tp, fn_, fp, tn))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> MlpParameters {
        MlpParameters::init(3, 4, 0.0, seed).unwrap()
    }

    #[test]
    fn zero_output_layer_gives_even_split() {
        let mut p = tiny(1);
        p.output_weight.iter_mut().for_each(|x| *x = 0.0);
        let probs = p.forward(&Embedding(vec![0.3, -1.0, 2.0]), None).unwrap();
        assert_eq!(probs, [0.5, 0.5]);
    }

    #[test]
    fn softmax_closed_form() {
        let [r, f] = softmax2([0.0, 3f64.ln()]);
        assert!((r - 0.25).abs() < 1e-15 && (f - 0.75).abs() < 1e-15);
        let [a, b] = softmax2([1000.0, -1000.0]);
        assert!(a.is_finite() && b.is_finite() && (a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(tiny(0).forward(&Embedding(vec![1.0]), None).is_err());
    }

    #[test]
    fn threshold_is_inclusive() {
        assert_eq!(route_for(0.5, 0.5), Route::Forget);
        assert_eq!(route_for(0.49, 0.5), Route::Retain);
        assert!(tiny(0).classify(&Embedding(vec![0.0; 3]), 1.0).is_err());
    }

    #[test]
    fn inverse_frequency_ratio() {
        let mk = |label| LabeledEmbedding { vector: Embedding(vec![0.0]), label };
        let mut data: Vec<_> = (0..10).map(|_| mk(Label::Forget)).collect();
        data.extend((0..990).map(|_| mk(Label::Retain)));
        let [w_retain, w_forget] = class_weights(&data).unwrap();
        assert!((w_forget / w_retain - 99.0).abs() < 1e-12);
        assert!(class_weights(&data[..10]).is_err());
    }

    #[test]
    fn rates_from_counts() {
        let r = Rates::from_counts(3, 1, 2, 4);
        assert_eq!(r.fnr, Some(0.25));
        assert!((r.fpr.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let only_neg = Rates::from_counts(0, 0, 1, 1);
        assert_eq!(only_neg.fnr, None);
    }

    #[test]
    fn constant_forget_classifier_rates() {
        let mut p = tiny(2);
        p.output_weight.iter_mut().for_each(|x| *x = 0.0);
        p.output_bias = vec![-5.0, 5.0];
        let mk = |v: f64, label| LabeledEmbedding { vector: Embedding(vec![v, 0.0, 1.0]), label };
        let data = vec![mk(1.0, Label::Forget), mk(2.0, Label::Forget), mk(3.0, Label::Retain), mk(4.0, Label::Retain)];
        let r = evaluate_rates(&p, &data, 0.5).unwrap();
        assert_eq!((r.fnr, r.fpr), (Some(0.0), Some(1.0)));
    }

    #[test]
    fn dropout_only_in_training_mode() {
        let mut p = MlpParameters::init(3, 16, 0.5, 4).unwrap();
        p.output_bias = vec![0.1, -0.1];
        let z = Embedding(vec![1.0, 2.0, 3.0]);
        let eval = p.forward(&z, None).unwrap();
        assert_eq!(eval, p.forward(&z, None).unwrap());
        let a = p.forward(&z, Some(1)).unwrap();
        assert_eq!(a, p.forward(&z, Some(1)).unwrap());
        assert!((a[0] + a[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn parameter_json_round_trip_and_shape_check() {
        let p = tiny(9);
        assert_eq!(MlpParameters::from_json(&p.to_json().unwrap()).unwrap(), p);
        let mut bad = p.clone();
        bad.hidden_bias.pop();
        assert!(MlpParameters::from_json(&serde_json::to_string(&bad).unwrap()).is_err());
    }

    #[test]
    fn labeled_jsonl_checks_dimensions() {
        let ok = "{\"vector\":[1.0,2.0],\"label\":1}\n{\"vector\":[0.5,0.0],\"label\":0}\n";
        assert_eq!(parse_labeled_jsonl(ok, "d").unwrap().len(), 2);
        let mixed = "{\"vector\":[1.0,2.0],\"label\":1}\n{\"vector\":[0.5],\"label\":0}\n";
        assert!(matches!(parse_labeled_jsonl(mixed, "d"), Err(Error::Parse { line: 2, .. })));
        assert!(parse_labeled_jsonl("{\"vector\":[1.0],\"label\":2}", "d").is_err());
    }

    #[test]
    fn single_class_training_is_rejected() {
        let data = vec![LabeledEmbedding { vector: Embedding(vec![1.0]), label: Label::Forget }];
        assert!(train(&data, &ClassifierConfig::default()).is_err());
    }
}
