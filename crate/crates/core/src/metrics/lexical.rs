//! Word-level overlap metrics. Both texts are split into lowercased words with
//! edge punctuation stripped before comparison.

use std::collections::HashMap;

use crate::text::normalized_words;
use crate::{Error, Result};

/// Smoothing numerator used in place of a zero n-gram match count.
pub const BLEU_EPSILON: f64 = 1e-9;

fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn reference_words(reference: &str) -> Result<Vec<String>> {
    let words = normalized_words(reference);
    if words.is_empty() {
        return Err(Error::invalid("reference has no words"));
    }
    Ok(words)
}

/// LCS length over the reference length.
pub fn rouge_l_recall(reference: &str, hypothesis: &str) -> Result<f64> {
    let r = reference_words(reference)?;
    let h = normalized_words(hypothesis);
    Ok(lcs_len(&r, &h) as f64 / r.len() as f64)
}

/// Harmonic mean of LCS precision and recall.
pub fn rouge_l_f1(reference: &str, hypothesis: &str) -> Result<f64> {
    let r = reference_words(reference)?;
    let h = normalized_words(hypothesis);
    let lcs = lcs_len(&r, &h);
    if lcs == 0 {
        return Ok(0.0);
    }
    let recall = lcs as f64 / r.len() as f64;
    let precision = lcs as f64 / h.len() as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

fn ngram_counts(words: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in words.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Sentence BLEU: brevity penalty times the geometric mean of clipped n-gram
/// precisions for n = 1..=min(max_n, hypothesis length). A zero match count
/// for n ≥ 2 is replaced by [`BLEU_EPSILON`]; no unigram overlap scores 0.
pub fn bleu(reference: &str, hypothesis: &str, max_n: usize) -> f64 {
    let r = normalized_words(reference);
    let h = normalized_words(hypothesis);
    if r.is_empty() || h.is_empty() || max_n == 0 {
        return 0.0;
    }
    let order = max_n.min(h.len());
    let mut log_sum = 0.0;
    for n in 1..=order {
        let hyp = ngram_counts(&h, n);
        let refc = ngram_counts(&r, n);
        let matches: usize = hyp
            .iter()
            .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        if matches == 0 && n == 1 {
            return 0.0;
        }
        let total = (h.len() + 1 - n) as f64;
        let numerator = if matches == 0 { BLEU_EPSILON } else { matches as f64 };
        log_sum += (numerator / total).ln();
    }
    let (c, rl) = (h.len() as f64, r.len() as f64);
    let brevity = if c > rl { 1.0 } else { (1.0 - rl / c).exp() };
    brevity * (log_sum / order as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rouge_reference_values() {
        assert_eq!(rouge_l_recall("the cat sat", "the cat sat").unwrap(), 1.0);
        assert!((rouge_l_recall("the cat sat", "the dog sat").unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rouge_l_recall("the cat sat", "").unwrap(), 0.0);
        assert!(rouge_l_recall("", "x").is_err());
        assert!((rouge_l_f1("a b c d", "a c").unwrap() - 2.0 * 1.0 * 0.5 / 1.5).abs() < 1e-15);
        assert_eq!(rouge_l_f1("a b", "c d").unwrap(), 0.0);
    }

    #[test]
    fn bleu_reference_values() {
        assert_eq!(bleu("the cat sat on the mat", "the cat sat on the mat", 4), 1.0);
        assert_eq!(bleu("a b", "a b", 4), 1.0);
        assert_eq!(bleu("the cat", "dog runs", 4), 0.0);
        assert_eq!(bleu("x", "", 4), 0.0);
    }

    #[test]
    fn bleu_short_hypothesis_gets_brevity_penalty() {
        let b = bleu("a b c d", "a b", 4);
        assert!((b - (1.0f64 - 2.0).exp()).abs() < 1e-12);
    }
}
