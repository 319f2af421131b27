#![allow(dead_code)]

use std::ops::RangeInclusive;

use forgetgen::classifier::{Label, LabeledEmbedding};
use forgetgen::embedding::Embedding;
use forgetgen::model::BigramModel;
use forgetgen::{TokenId, Tokenizer, Vocabulary, WhitespaceTokenizer};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tokenizer over `w1 .. w{n-1}` plus `<unk>`, so its vocabulary has `n` entries.
pub fn toy_tokenizer(n: usize) -> WhitespaceTokenizer {
    let words: Vec<String> = (1..n).map(|i| format!("w{i}")).collect();
    WhitespaceTokenizer::new(Vocabulary::from_words(words).unwrap())
}

/// Random bigram model. Each row keeps a random nonempty subset of the
/// vocabulary; the rest have probability zero. Some rows are left out so the
/// model falls back to uniform for them.
pub fn random_bigram(rng: &mut ChaCha8Rng, vocab: usize, zero_rate: f64) -> BigramModel {
    let mut entries = Vec::new();
    for prev in 0..vocab {
        if rng.random_bool(0.15) {
            continue;
        }
        let mut weights: Vec<f64> = (0..vocab)
            .map(|_| if rng.random_bool(zero_rate) { 0.0 } else { rng.random_range(0.05..1.0) })
            .collect();
        if weights.iter().all(|&w| w == 0.0) {
            weights[rng.random_range(0..vocab)] = 1.0;
        }
        let total: f64 = weights.iter().sum();
        for (next, w) in weights.into_iter().enumerate() {
            if w > 0.0 {
                entries.push((TokenId(prev as u32), TokenId(next as u32), w / total));
            }
        }
    }
    BigramModel::new(vocab, entries).unwrap()
}

pub fn random_sequence(rng: &mut ChaCha8Rng, vocab: usize, len: RangeInclusive<usize>) -> Vec<TokenId> {
    let len = rng.random_range(len);
    (0..len).map(|_| TokenId(rng.random_range(0..vocab as u32))).collect()
}

pub fn text_of(tok: &WhitespaceTokenizer, ids: &[TokenId]) -> String {
    tok.detokenize(ids).unwrap()
}

/// Does `needle` occur contiguously in `haystack`?
pub fn contains_run(haystack: &[TokenId], needle: &[TokenId]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Two Gaussian blobs in `dim` dimensions, `per_class` points each, centers
/// at `±offset` on every axis with unit noise scaled by `sigma`.
pub fn blobs(rng: &mut ChaCha8Rng, per_class: usize, dim: usize, offset: f64, sigma: f64) -> Vec<LabeledEmbedding> {
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut out = Vec::with_capacity(2 * per_class);
    for (label, sign) in [(Label::Forget, 1.0), (Label::Retain, -1.0)] {
        for _ in 0..per_class {
            let v = (0..dim).map(|_| sign * offset + noise.sample(rng)).collect();
            out.push(LabeledEmbedding { vector: Embedding(v), label });
        }
    }
    out.shuffle(rng);
    out
}
