//! Probability, truth ratio, KS forget quality, model utility and FQ gap.

use serde::{Deserialize, Serialize};

use crate::model::{teacher_forced_logprobs, LanguageModel};
use crate::tokenizer::Tokenizer;
use crate::{Error, Result};

/// Floor applied to teacher-forced probabilities before ratios are taken.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// `P(answer | question)^(1/|answer|)` under teacher forcing, floored at
/// [`PROBABILITY_FLOOR`].
pub fn normalized_answer_probability(
    model: &dyn LanguageModel,
    tok: &dyn Tokenizer,
    question: &str,
    answer: &str,
) -> Result<f64> {
    let context = tok.tokenize(question);
    let answer_tokens = tok.tokenize(answer);
    if answer_tokens.is_empty() {
        return Err(Error::invalid("answer has no tokens"));
    }
    let logprobs = teacher_forced_logprobs(model, &context, &answer_tokens)?;
    let mean = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    Ok(mean.exp().max(PROBABILITY_FLOOR))
}

/// Length-normalized probabilities of the answer variants for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredAnswer {
    pub correct: f64,
    pub perturbed: Vec<f64>,
    /// Paraphrased answer; subsets without paraphrases store the correct
    /// answer's probability here.
    pub paraphrased: f64,
}

impl ScoredAnswer {
    pub fn score(
        model: &dyn LanguageModel,
        tok: &dyn Tokenizer,
        question: &str,
        correct: &str,
        perturbed: &[&str],
        paraphrased: Option<&str>,
    ) -> Result<Self> {
        let p = |a: &str| normalized_answer_probability(model, tok, question, a);
        let correct_p = p(correct)?;
        Ok(ScoredAnswer {
            correct: correct_p,
            perturbed: perturbed.iter().map(|a| p(a)).collect::<Result<_>>()?,
            paraphrased: match paraphrased {
                Some(a) => p(a)?,
                None => correct_p,
            },
        })
    }
}

/// Correct-answer probability over the summed perturbed probabilities.
pub fn answer_probability_ratio(s: &ScoredAnswer) -> Result<f64> {
    let denom: f64 = s.perturbed.iter().sum();
    if !(denom > 0.0) {
        return Err(Error::invalid("perturbed probabilities sum to zero"));
    }
    Ok(s.correct / denom)
}

/// Geometric mean of the perturbed probabilities over the paraphrased one.
pub fn truth_ratio(s: &ScoredAnswer) -> Result<f64> {
    if s.perturbed.is_empty() {
        return Err(Error::invalid("truth ratio needs at least one perturbed answer"));
    }
    if s.perturbed.iter().chain([&s.paraphrased]).any(|&p| !(p > 0.0)) {
        return Err(Error::invalid("truth ratio needs strictly positive probabilities"));
    }
    let mean_log = s.perturbed.iter().map(|p| p.ln()).sum::<f64>() / s.perturbed.len() as f64;
    Ok(mean_log.exp() / s.paraphrased)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn sorted_finite(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::invalid("KS test needs non-empty samples"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("KS test samples must be finite"));
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (-1)^(k-1) exp(-2 k² λ²)`,
/// summed until a term drops below 1e-10 or 100 terms.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.05 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = sign * 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-10 {
            break;
        }
        sign = -sign;
    }
    sum.clamp(0.0, 1.0)
}

/// Two-sample KS statistic and asymptotic p-value. The effective sample size
/// is `n·m/(n+m)`, with the usual finite-sample correction
/// `λ = (√n_e + 0.12 + 0.11/√n_e)·D`.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<KsResult> {
    let (x, y) = (sorted_finite(x)?, sorted_finite(y)?);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let p_value = if d == 0.0 {
        1.0
    } else {
        kolmogorov_survival((en + 0.12 + 0.11 / en) * d)
    };
    Ok(KsResult { statistic: d, p_value })
}

/// KS p-value between unlearned-model and retained-model truth ratios.
pub fn forget_quality(unlearned: &[f64], retained: &[f64]) -> Result<f64> {
    Ok(ks_two_sample(unlearned, retained)?.p_value)
}

pub const UTILITY_SCORE_COUNT: usize = 9;

/// Harmonic mean of the nine utility scores; collapses to 0 if any is 0.
pub fn model_utility(scores: &[f64]) -> Result<f64> {
    if scores.len() != UTILITY_SCORE_COUNT {
        return Err(Error::invalid(format!(
            "model utility takes {UTILITY_SCORE_COUNT} scores, found {}",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::invalid("utility scores must be finite and nonnegative"));
    }
    if scores.contains(&0.0) {
        log::warn!("a utility score is zero; model utility collapses to 0");
        return Ok(0.0);
    }
    Ok(scores.len() as f64 / scores.iter().map(|s| 1.0 / s).sum::<f64>())
}

/// Per-example lexical scores of a model's output on one forget example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LexicalPair {
    pub bleu: f64,
    pub rouge_l: f64,
}

/// `|mean BLEU_u − mean BLEU_r| + |mean ROUGE_u − mean ROUGE_r|` over aligned
/// example sets.
pub fn fq_gap(unlearned: &[LexicalPair], retained: &[LexicalPair]) -> Result<f64> {
    if unlearned.len() != retained.len() {
        return Err(Error::invalid(format!(
            "FQ gap needs aligned sets, found {} and {} examples",
            unlearned.len(),
            retained.len()
        )));
    }
    if unlearned.is_empty() {
        return Err(Error::invalid("FQ gap needs at least one example"));
    }
    let mean = |v: &[LexicalPair], f: fn(&LexicalPair) -> f64| v.iter().map(f).sum::<f64>() / v.len() as f64;
    let bleu_gap = (mean(unlearned, |p| p.bleu) - mean(retained, |p| p.bleu)).abs();
    let rouge_gap = (mean(unlearned, |p| p.rouge_l) - mean(retained, |p| p.rouge_l)).abs();
    Ok(bleu_gap + rouge_gap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(correct: f64, perturbed: &[f64], paraphrased: f64) -> ScoredAnswer {
        ScoredAnswer {
            correct,
            perturbed: perturbed.to_vec(),
            paraphrased,
        }
    }

    #[test]
    fn probability_ratio_cases() {
        let p = 0.3;
        assert!((answer_probability_ratio(&scored(p, &[p; 4], p)).unwrap() - 0.25).abs() < 1e-15);
        let eps = PROBABILITY_FLOOR;
        let r = answer_probability_ratio(&scored(0.5, &[eps; 4], 0.5)).unwrap();
        assert!((r - 0.5 / (4.0 * eps)).abs() / r < 1e-12);
        assert!(answer_probability_ratio(&scored(0.5, &[0.0; 4], 0.5)).is_err());
    }

    #[test]
    fn truth_ratio_cases() {
        assert!((truth_ratio(&scored(0.9, &[0.2; 3], 0.2)).unwrap() - 1.0).abs() < 1e-12);
        let r = truth_ratio(&scored(0.9, &[0.04, 0.09], 0.36)).unwrap();
        assert!((r - 1.0 / 6.0).abs() < 1e-12);
        assert!(truth_ratio(&scored(0.9, &[0.0, 0.09], 0.36)).is_err());
        assert!(truth_ratio(&scored(0.9, &[], 0.36)).is_err());
    }

    #[test]
    fn ks_reference_cases() {
        let x = [0.3, 1.0, 2.5, 2.5];
        let same = ks_two_sample(&x, &[2.5, 0.3, 2.5, 1.0]).unwrap();
        assert_eq!((same.statistic, same.p_value), (0.0, 1.0));
        let disjoint = ks_two_sample(&[1.0, 2.0], &[3.0, 4.0, 5.0]).unwrap();
        assert_eq!(disjoint.statistic, 1.0);
        let shifted = ks_two_sample(&[1.0, 2.0, 3.0], &[1.5, 2.5, 3.5]).unwrap();
        assert!((shifted.statistic - 1.0 / 3.0).abs() < 1e-15);
        assert!(ks_two_sample(&[], &[1.0]).is_err());
    }

    #[test]
    fn forget_quality_of_identical_samples_is_one() {
        let x = [0.1, 0.5, 0.7, 0.9];
        assert_eq!(forget_quality(&x, &x).unwrap(), 1.0);
        let far: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let near: Vec<f64> = (0..50).map(|i| 1000.0 + i as f64).collect();
        assert!(forget_quality(&far, &near).unwrap() < 1e-10);
    }

    #[test]
    fn kolmogorov_survival_known_values() {
        // Q(1.36) ≈ 0.0495 (the 5% critical value).
        assert!((kolmogorov_survival(1.36) - 0.0494).abs() < 1e-3);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
        assert!(kolmogorov_survival(5.0) < 1e-20);
    }

    #[test]
    fn model_utility_cases() {
        assert!((model_utility(&[0.4; 9]).unwrap() - 0.4).abs() < 1e-15);
        let mut s = [0.5; 9];
        s[3] = 0.0;
        assert_eq!(model_utility(&s).unwrap(), 0.0);
        assert!(model_utility(&[0.5; 8]).is_err());
        s[3] = -1.0;
        assert!(model_utility(&s).is_err());
    }

    #[test]
    fn fq_gap_cases() {
        let a = [LexicalPair { bleu: 0.5, rouge_l: 0.4 }, LexicalPair { bleu: 0.1, rouge_l: 0.2 }];
        assert_eq!(fq_gap(&a, &a).unwrap(), 0.0);
        let u = [LexicalPair { bleu: 0.4, rouge_l: 0.3 }];
        let r = [LexicalPair { bleu: 0.3, rouge_l: 0.5 }];
        assert!((fq_gap(&u, &r).unwrap() - 0.3).abs() < 1e-12);
        assert!(fq_gap(&a, &u).is_err());
        assert!(fq_gap(&[], &[]).is_err());
    }
}
