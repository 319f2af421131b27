//! Sentence and prompt embeddings: masked mean pooling over hidden states,
//! pluggable text embedders, and cosine similarity.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::text::{fnv1a, normalized_words};
use crate::tokenizer::{Tokenizer, Vocabulary, WhitespaceTokenizer};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Per-position hidden states of one layer plus the attention mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenStates {
    states: Vec<Vec<f64>>,
    mask: Vec<u8>,
}

impl HiddenStates {
    pub fn new(states: Vec<Vec<f64>>, mask: Vec<u8>) -> Result<Self> {
        if states.len() != mask.len() {
            return Err(Error::invalid(format!(
                "{} hidden-state rows but mask of length {}",
                states.len(),
                mask.len()
            )));
        }
        if let Some(first) = states.first() {
            if states.iter().any(|r| r.len() != first.len()) {
                return Err(Error::invalid("hidden-state rows have differing widths"));
            }
        }
        if mask.iter().any(|&m| m > 1) {
            return Err(Error::invalid("mask entries must be 0 or 1"));
        }
        if states.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::invalid("hidden states contain non-finite values"));
        }
        Ok(HiddenStates { states, mask })
    }

    /// Unmasked states: every position counts.
    pub fn unmasked(states: Vec<Vec<f64>>) -> Result<Self> {
        let mask = vec![1; states.len()];
        Self::new(states, mask)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }
}

/// Mean of the unmasked rows.
pub fn mean_pool(h: &HiddenStates) -> Result<Embedding> {
    let active = h.mask.iter().filter(|&&m| m == 1).count();
    if active == 0 {
        return Err(Error::invalid("mean pooling needs at least one unmasked position"));
    }
    let mut sum = vec![0.0; h.dim()];
    for (row, &m) in h.states.iter().zip(&h.mask) {
        if m == 1 {
            for (s, x) in sum.iter_mut().zip(row) {
                *s += x;
            }
        }
    }
    let n = active as f64;
    Ok(Embedding(sum.into_iter().map(|s| s / n).collect()))
}

fn dot_and_norms(a: &Embedding, b: &Embedding) -> Result<(f64, f64, f64)> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let dot = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot, a.norm(), b.norm()))
}

/// Cosine similarity, clamped to [-1, 1]. Zero vectors are an error.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    let (dot, na, nb) = dot_and_norms(a, b)?;
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity where a zero vector matches nothing (similarity 0).
/// Used inside retrieval and semantic matching so both stay total.
pub fn cosine_or_zero(a: &Embedding, b: &Embedding) -> Result<f64> {
    let (dot, na, nb) = dot_and_norms(a, b)?;
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Deterministic text → vector map with a fixed dimension.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Embedding>;
}

/// Embeds non-empty text and checks the embedder honored its dimension.
pub fn embed_text(embedder: &dyn Embedder, text: &str) -> Result<Embedding> {
    if text.trim().is_empty() {
        return Err(Error::invalid("cannot embed empty text"));
    }
    let v = embedder.embed(text)?;
    if v.dim() != embedder.dim() {
        return Err(Error::invalid(format!(
            "embedder returned dimension {}, declared {}",
            v.dim(),
            embedder.dim()
        )));
    }
    if !v.is_finite() {
        return Err(Error::invalid("embedder returned non-finite values"));
    }
    Ok(v)
}

/// Word-count vectors. Vocabulary words get their own slot; other words are
/// hashed into `hash_buckets` extra slots (dropped when there are none).
#[derive(Debug, Clone)]
pub struct BagOfWordsEmbedder {
    slots: HashMap<String, usize>,
    hash_buckets: usize,
}

impl BagOfWordsEmbedder {
    pub fn new(vocab: &Vocabulary, hash_buckets: usize) -> Self {
        let slots = vocab
            .words()
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        BagOfWordsEmbedder { slots, hash_buckets }
    }

    fn slot(&self, word: &str) -> Option<usize> {
        if let Some(&i) = self.slots.get(word) {
            return Some(i);
        }
        (self.hash_buckets > 0)
            .then(|| self.slots.len() + (fnv1a(word.as_bytes()) % self.hash_buckets as u64) as usize)
    }
}

impl Embedder for BagOfWordsEmbedder {
    fn dim(&self) -> usize {
        self.slots.len() + self.hash_buckets
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let mut v = vec![0.0; self.dim()];
        for word in normalized_words(text) {
            if let Some(i) = self.slot(&word) {
                v[i] += 1.0;
            }
        }
        Ok(Embedding(v))
    }
}

/// Sum of per-word vectors from a lookup table; unknown words contribute
/// nothing. Lets tests place words at chosen cosine similarities.
#[derive(Debug, Clone)]
pub struct WordVectorEmbedder {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectorEmbedder {
    pub fn new<I, S>(dim: usize, vectors: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut table = HashMap::new();
        for (word, v) in vectors {
            if v.len() != dim {
                return Err(Error::invalid(format!(
                    "vector for {:?} has dimension {}, expected {dim}",
                    word.as_ref(),
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("vector for {:?} is not finite", word.as_ref())));
            }
            table.insert(word.as_ref().to_lowercase(), v);
        }
        Ok(WordVectorEmbedder { dim, vectors: table })
    }
}

impl Embedder for WordVectorEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let mut v = vec![0.0; self.dim];
        for word in normalized_words(text) {
            if let Some(w) = self.vectors.get(&word) {
                for (acc, x) in v.iter_mut().zip(w) {
                    *acc += x;
                }
            }
        }
        Ok(Embedding(v))
    }
}

/// Which hidden layer to read. Negative values count from the last layer,
/// so the default `-2` is the penultimate layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayerIndex(pub i32);

impl Default for LayerIndex {
    fn default() -> Self {
        LayerIndex(-2)
    }
}

/// Source of per-token hidden states for a text.
pub trait HiddenStateProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn hidden_states(&self, text: &str, layer: LayerIndex) -> Result<HiddenStates>;
}

impl<P: HiddenStateProvider + ?Sized> HiddenStateProvider for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn hidden_states(&self, text: &str, layer: LayerIndex) -> Result<HiddenStates> {
        (**self).hidden_states(text, layer)
    }
}

impl<P: HiddenStateProvider + ?Sized> HiddenStateProvider for std::sync::Arc<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn hidden_states(&self, text: &str, layer: LayerIndex) -> Result<HiddenStates> {
        (**self).hidden_states(text, layer)
    }
}

/// Toy hidden states: one-hot token ids, one row per token. Has no layers,
/// so the layer index is ignored.
#[derive(Debug, Clone)]
pub struct OneHotStates {
    tokenizer: WhitespaceTokenizer,
}

impl OneHotStates {
    pub fn new(tokenizer: WhitespaceTokenizer) -> Self {
        OneHotStates { tokenizer }
    }
}

impl HiddenStateProvider for OneHotStates {
    fn dim(&self) -> usize {
        self.tokenizer.vocab_size()
    }

    fn hidden_states(&self, text: &str, _layer: LayerIndex) -> Result<HiddenStates> {
        let tokens = self.tokenizer.tokenize(text);
        if tokens.is_empty() {
            return Err(Error::invalid("no tokens to produce hidden states for"));
        }
        let dim = self.dim();
        let rows = tokens
            .iter()
            .map(|t| {
                let mut row = vec![0.0; dim];
                row[t.index()] = 1.0;
                row
            })
            .collect();
        HiddenStates::unmasked(rows)
    }
}

/// Embedder that mean-pools a provider's hidden states at a fixed layer.
#[derive(Debug, Clone)]
pub struct PooledEmbedder<P> {
    provider: P,
    layer: LayerIndex,
}

impl<P: HiddenStateProvider> PooledEmbedder<P> {
    pub fn new(provider: P, layer: LayerIndex) -> Self {
        PooledEmbedder { provider, layer }
    }
}

impl<P: HiddenStateProvider> Embedder for PooledEmbedder<P> {
    fn dim(&self) -> usize {
        self.provider.dim()
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        mean_pool(&self.provider.hidden_states(text, self.layer)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(v: &[f64]) -> Embedding {
        Embedding(v.to_vec())
    }

    #[test]
    fn pooling_single_row_is_identity() {
        let h = HiddenStates::unmasked(vec![vec![0.5, -2.0, 3.25]]).unwrap();
        assert_eq!(mean_pool(&h).unwrap(), e(&[0.5, -2.0, 3.25]));
    }

    #[test]
    fn pooling_averages_rows() {
        let h = HiddenStates::unmasked(vec![vec![1.0, 1.0], vec![3.0, 3.0]]).unwrap();
        assert_eq!(mean_pool(&h).unwrap(), e(&[2.0, 2.0]));
    }

    #[test]
    fn pooling_respects_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let h = HiddenStates::new(rows.clone(), vec![1, 0, 1, 0]).unwrap();
        let pooled = mean_pool(&h).unwrap();
        for k in 0..5 {
            let expected = (rows[0][k] + rows[2][k]) / 2.0;
            assert!((pooled.0[k] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn pooling_rejects_empty_mask() {
        let h = HiddenStates::new(vec![vec![1.0], vec![2.0]], vec![0, 0]).unwrap();
        assert!(matches!(mean_pool(&h), Err(Error::InvalidInput(_))));
        assert!(HiddenStates::new(vec![vec![1.0]], vec![1, 1]).is_err());
        assert!(HiddenStates::new(vec![vec![1.0], vec![1.0, 2.0]], vec![1, 1]).is_err());
    }

    #[test]
    fn cosine_reference_values() {
        let v = e(&[0.3, -1.2, 4.0]);
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(), 0.0);
        // 32 / (sqrt(14) * sqrt(77))
        let c = cosine_similarity(&e(&[1.0, 2.0, 3.0]), &e(&[4.0, 5.0, 6.0])).unwrap();
        assert!((c - 0.974_631_846).abs() < 1e-4);
    }

    #[test]
    fn cosine_errors_and_zero_policy() {
        let z = e(&[0.0, 0.0]);
        let v = e(&[1.0, 0.0]);
        assert!(cosine_similarity(&z, &v).is_err());
        assert_eq!(cosine_or_zero(&z, &v).unwrap(), 0.0);
        assert!(cosine_similarity(&v, &e(&[1.0])).is_err());
        assert!(cosine_or_zero(&v, &e(&[1.0])).is_err());
    }

    fn bow() -> BagOfWordsEmbedder {
        BagOfWordsEmbedder::new(&Vocabulary::from_words(["the", "cat", "dog"]).unwrap(), 0)
    }

    #[test]
    fn bag_of_words_properties() {
        let b = bow();
        let cat = embed_text(&b, "cat").unwrap();
        let dog = embed_text(&b, "dog").unwrap();
        assert_eq!(cosine_similarity(&cat, &dog).unwrap(), 0.0);
        let x = embed_text(&b, "the cat").unwrap();
        let y = embed_text(&b, "cat the").unwrap();
        assert_eq!(x, y);
        assert!((cosine_similarity(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert!(embed_text(&b, "   ").is_err());
    }

    #[test]
    fn hashed_buckets_cover_unknown_words() {
        let b = BagOfWordsEmbedder::new(&Vocabulary::from_words(["the"]).unwrap(), 16);
        assert_eq!(b.dim(), 18);
        let v = b.embed("zebra").unwrap();
        assert_eq!(v.0.iter().sum::<f64>(), 1.0);
        assert_eq!(v, b.embed("Zebra!").unwrap());
    }

    #[test]
    fn embedding_is_pure() {
        let b = bow();
        let first = b.embed("the cat the").unwrap();
        for _ in 0..100 {
            assert_eq!(b.embed("the cat the").unwrap(), first);
        }
    }

    #[test]
    fn pooled_one_hot_is_normalized_bag_of_words() {
        let tok = WhitespaceTokenizer::new(Vocabulary::from_words(["the", "cat"]).unwrap());
        let pooled = PooledEmbedder::new(OneHotStates::new(tok), LayerIndex::default());
        assert_eq!(pooled.embed("the cat the").unwrap(), e(&[0.0, 2.0 / 3.0, 1.0 / 3.0]));
        assert!(pooled.embed("").is_err());
    }

    #[test]
    fn word_vectors_sum() {
        let w = WordVectorEmbedder::new(2, [("a", vec![1.0, 0.0]), ("b", vec![0.0, 2.0])]).unwrap();
        assert_eq!(w.embed("a B c").unwrap(), e(&[1.0, 2.0]));
        assert!(WordVectorEmbedder::new(2, [("a", vec![1.0])]).is_err());
    }

    fn loop_column_mean(rows: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::new();
        for k in 0..rows[0].len() {
            let mut s = 0.0;
            for r in rows {
                s += r[k];
            }
            out.push(s / rows.len() as f64);
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn all_ones_mask_is_column_mean(rows in (1usize..8, 1usize..6).prop_flat_map(|(l, d)| {
            proptest::collection::vec(proptest::collection::vec(-100.0f64..100.0, d), l)
        })) {
            let expected = loop_column_mean(&rows);
            let got = mean_pool(&HiddenStates::unmasked(rows).unwrap()).unwrap();
            for (g, x) in got.0.iter().zip(&expected) {
                prop_assert!((g - x).abs() < 1e-9);
            }
        }

        #[test]
        fn cosine_is_symmetric_and_scale_invariant(
            (a, b) in (1usize..8).prop_flat_map(|d| (
                proptest::collection::vec(-10.0f64..10.0, d),
                proptest::collection::vec(-10.0f64..10.0, d),
            )),
            c in 0.01f64..100.0,
        ) {
            let (a, b) = (Embedding(a), Embedding(b));
            prop_assume!(a.norm() > 1e-6 && b.norm() > 1e-6);
            let ab = cosine_similarity(&a, &b).unwrap();
            prop_assert!((ab - cosine_similarity(&b, &a).unwrap()).abs() < 1e-9);
            let scaled = Embedding(a.0.iter().map(|x| x * c).collect());
            prop_assert!((ab - cosine_similarity(&scaled, &b).unwrap()).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
