//! Language-model abstraction and the deterministic toy models.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tokenizer::Vocabulary;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

pub type TokenSequence = Vec<TokenId>;

/// Dense-vector stand-in for ln(0). Keeps arithmetic on log-probabilities
/// NaN-free; the decoder treats it as a pruned extension.
pub const LOG_ZERO: f64 = -1e9;

/// True for [`LOG_ZERO`], anything below it, `-inf` and NaN.
pub fn is_log_zero(logprob: f64) -> bool {
    !(logprob > LOG_ZERO)
}

fn ln_or_log_zero(p: f64) -> f64 {
    if p > 0.0 {
        p.ln().max(LOG_ZERO)
    } else {
        LOG_ZERO
    }
}

/// A next-token distribution over a fixed vocabulary.
///
/// Implementations must be pure: the same context gives bit-identical output
/// on every call and from every thread.
pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Log-probability of every vocabulary entry following `context`.
    /// The result has length [`vocab_size`](Self::vocab_size) and its
    /// exponentiated entries sum to 1.
    fn next_token_logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>>;
}

pub(crate) fn check_context(context: &[TokenId], vocab_size: usize) -> Result<()> {
    match context.iter().find(|t| t.index() >= vocab_size) {
        Some(t) => Err(Error::invalid(format!(
            "token id {} outside vocabulary of {vocab_size}",
            t.0
        ))),
        None => Ok(()),
    }
}

/// Teacher-forced log-probability of each token of `continuation` given
/// `context` and the continuation prefix before it.
pub fn teacher_forced_logprobs(
    model: &dyn LanguageModel,
    context: &[TokenId],
    continuation: &[TokenId],
) -> Result<Vec<f64>> {
    check_context(continuation, model.vocab_size())?;
    let mut running: Vec<TokenId> = context.to_vec();
    let mut out = Vec::with_capacity(continuation.len());
    for &tok in continuation {
        let dist = model.next_token_logprobs(&running)?;
        out.push(dist[tok.index()]);
        running.push(tok);
    }
    Ok(out)
}

/// Every token equally likely regardless of context.
#[derive(Debug, Clone, Copy)]
pub struct UniformModel {
    vocab_size: usize,
}

impl UniformModel {
    pub fn new(vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::invalid("vocabulary size must be positive"));
        }
        Ok(UniformModel { vocab_size })
    }
}

impl LanguageModel for UniformModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        check_context(context, self.vocab_size)?;
        Ok(vec![-(self.vocab_size as f64).ln(); self.vocab_size])
    }
}

/// Table-driven bigram model: the distribution depends only on the last
/// context token. Contexts that are empty, or whose last token has no row,
/// get the uniform distribution.
#[derive(Debug, Clone)]
pub struct BigramModel {
    vocab_size: usize,
    rows: HashMap<TokenId, Vec<(TokenId, f64)>>,
}

const ROW_SUM_TOLERANCE: f64 = 1e-6;

impl BigramModel {
    /// Builds a model from `(prev, next, probability)` triples. Each `prev`
    /// row must sum to 1 within 1e-6; rows are renormalized exactly.
    pub fn new<I>(vocab_size: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (TokenId, TokenId, f64)>,
    {
        let mut builder = RowBuilder::new(vocab_size)?;
        for (prev, next, p) in entries {
            builder.insert(prev, next, p).map_err(Error::InvalidInput)?;
        }
        builder.finish().map_err(|(_, m)| Error::InvalidInput(m))
    }

    /// Parses the `prev next prob` line format, resolving tokens through
    /// `vocab`. Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str, vocab: &Vocabulary, source_name: &str) -> Result<Self> {
        let mut builder = RowBuilder::new(vocab.len())?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |m: String| Error::parse(source_name, lineno + 1, m);
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [prev, next, prob] = fields[..] else {
                return Err(at(format!("expected `prev next prob`, found {} fields", fields.len())));
            };
            let lookup = |w: &str| {
                vocab
                    .id(&w.to_lowercase())
                    .ok_or_else(|| at(format!("token {w:?} not in vocabulary")))
            };
            let (prev, next) = (lookup(prev)?, lookup(next)?);
            let p: f64 = prob
                .parse()
                .map_err(|_| at(format!("probability {prob:?} is not a number")))?;
            builder.insert_at(prev, next, p, lineno + 1).map_err(at)?;
        }
        builder
            .finish()
            .map_err(|(line, m)| Error::parse(source_name, line, m))
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, vocab, &path.display().to_string())
    }

    /// Stored row for `prev` as `(next, probability)` pairs.
    pub fn row(&self, prev: TokenId) -> Option<&[(TokenId, f64)]> {
        self.rows.get(&prev).map(Vec::as_slice)
    }
}

impl LanguageModel for BigramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        check_context(context, self.vocab_size)?;
        let row = context.last().and_then(|prev| self.rows.get(prev));
        Ok(match row {
            Some(row) => {
                let mut out = vec![LOG_ZERO; self.vocab_size];
                for &(next, p) in row {
                    out[next.index()] = ln_or_log_zero(p);
                }
                out
            }
            None => vec![-(self.vocab_size as f64).ln(); self.vocab_size],
        })
    }
}

struct RowBuilder {
    vocab_size: usize,
    rows: HashMap<TokenId, (usize, Vec<(TokenId, f64)>)>,
}

impl RowBuilder {
    fn new(vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::invalid("vocabulary size must be positive"));
        }
        Ok(RowBuilder {
            vocab_size,
            rows: HashMap::new(),
        })
    }

    fn insert(&mut self, prev: TokenId, next: TokenId, p: f64) -> std::result::Result<(), String> {
        self.insert_at(prev, next, p, 0)
    }

    fn insert_at(&mut self, prev: TokenId, next: TokenId, p: f64, line: usize) -> std::result::Result<(), String> {
        for t in [prev, next] {
            if t.index() >= self.vocab_size {
                return Err(format!("token id {} outside vocabulary of {}", t.0, self.vocab_size));
            }
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(format!("probability {p} outside [0, 1]"));
        }
        let (_, row) = self.rows.entry(prev).or_insert_with(|| (line, Vec::new()));
        if row.iter().any(|&(n, _)| n == next) {
            return Err(format!("duplicate entry for ({}, {})", prev.0, next.0));
        }
        row.push((next, p));
        Ok(())
    }

    fn finish(self) -> std::result::Result<BigramModel, (usize, String)> {
        let mut rows = HashMap::with_capacity(self.rows.len());
        for (prev, (line, mut row)) in self.rows {
            let sum: f64 = row.iter().map(|&(_, p)| p).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err((line, format!("row for token {} sums to {sum}, expected 1", prev.0)));
            }
            for (_, p) in row.iter_mut() {
                *p /= sum;
            }
            row.sort_by_key(|&(n, _)| n);
            rows.insert(prev, row);
        }
        Ok(BigramModel {
            vocab_size: self.vocab_size,
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exp_sum(v: &[f64]) -> f64 {
        v.iter().map(|x| x.exp()).sum()
    }

    #[test]
    fn uniform_model_is_flat() {
        let m = UniformModel::new(7).unwrap();
        let lp = m.next_token_logprobs(&[TokenId(3), TokenId(6)]).unwrap();
        assert_eq!(lp.len(), 7);
        assert!(lp.iter().all(|&x| x == -(7f64).ln()));
    }

    #[test]
    fn deterministic_row_puts_all_mass_on_one_token() {
        let (a, b) = (TokenId(1), TokenId(2));
        let m = BigramModel::new(4, [(a, b, 1.0)]).unwrap();
        let lp = m.next_token_logprobs(&[a]).unwrap();
        assert_eq!(lp[b.index()], 0.0);
        for (i, &x) in lp.iter().enumerate() {
            if i != b.index() {
                assert_eq!(x, LOG_ZERO);
                assert!(is_log_zero(x));
            }
        }
    }

    #[test]
    fn split_row_yields_logged_probabilities() {
        let (a, b, c) = (TokenId(1), TokenId(2), TokenId(3));
        let m = BigramModel::new(4, [(a, b, 0.75), (a, c, 0.25)]).unwrap();
        let lp = m.next_token_logprobs(&[a]).unwrap();
        assert!((lp[2] - 0.75f64.ln()).abs() < 1e-15);
        assert!((lp[3] - 0.25f64.ln()).abs() < 1e-15);
        assert!((exp_sum(&lp) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_vocabulary_context_is_rejected() {
        let m = UniformModel::new(3).unwrap();
        assert!(matches!(m.next_token_logprobs(&[TokenId(3)]), Err(Error::InvalidInput(_))));
        let b = BigramModel::new(3, [(TokenId(0), TokenId(1), 1.0)]).unwrap();
        assert!(b.next_token_logprobs(&[TokenId(9)]).is_err());
    }

    #[test]
    fn parse_resolves_words_and_validates_rows() {
        let vocab = Vocabulary::from_words(["a", "b", "c"]).unwrap();
        let m = BigramModel::parse("# comment\na b 0.75\n\na c 0.25\n", &vocab, "t").unwrap();
        assert_eq!(m.row(TokenId(1)).unwrap(), &[(TokenId(2), 0.75), (TokenId(3), 0.25)]);

        let bad_sum = BigramModel::parse("a b 0.5\na c 0.25\n", &vocab, "t");
        assert!(matches!(bad_sum, Err(Error::Parse { line: 1, .. })));
        let unknown = BigramModel::parse("a zz 1.0\n", &vocab, "t");
        assert!(matches!(unknown, Err(Error::Parse { line: 1, .. })));
        let dup = BigramModel::parse("a b 0.5\na b 0.5\n", &vocab, "t");
        assert!(matches!(dup, Err(Error::Parse { line: 2, .. })));
        let arity = BigramModel::parse("a b\n", &vocab, "t");
        assert!(matches!(arity, Err(Error::Parse { line: 1, .. })));
        let range = BigramModel::parse("a b 1.5\n", &vocab, "t");
        assert!(range.is_err());
        let nan = BigramModel::parse("a b NaN\n", &vocab, "t");
        assert!(nan.is_err());
    }

    fn random_bigram(rng: &mut ChaCha8Rng, vocab: usize) -> BigramModel {
        let mut entries = Vec::new();
        for prev in 0..vocab as u32 {
            let weights: Vec<f64> = (0..vocab).map(|_| rng.random::<f64>()).collect();
            let total: f64 = weights.iter().sum();
            for (next, w) in weights.iter().enumerate() {
                entries.push((TokenId(prev), TokenId(next as u32), w / total));
            }
        }
        BigramModel::new(vocab, entries).unwrap()
    }

    #[test]
    fn distributions_normalize_over_random_contexts() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bigram = random_bigram(&mut rng, 9);
        let uniform = UniformModel::new(9).unwrap();
        for _ in 0..1000 {
            let len = rng.random_range(0..6);
            let ctx: Vec<TokenId> = (0..len).map(|_| TokenId(rng.random_range(0..9))).collect();
            for m in [&bigram as &dyn LanguageModel, &uniform] {
                let lp = m.next_token_logprobs(&ctx).unwrap();
                assert_eq!(lp.len(), 9);
                assert!((exp_sum(&lp) - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn models_are_pure_across_threads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = std::sync::Arc::new(random_bigram(&mut rng, 6));
        let ctx = vec![TokenId(2), TokenId(4)];
        let reference = m.next_token_logprobs(&ctx).unwrap();
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let m = m.clone();
                let ctx = ctx.clone();
                std::thread::spawn(move || m.next_token_logprobs(&ctx).unwrap())
            })
            .collect();
        for h in handles {
            let out = h.join().unwrap();
            assert!(out.iter().zip(&reference).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn teacher_forcing_follows_the_chain_rule() {
        let (a, b, c) = (TokenId(1), TokenId(2), TokenId(3));
        let m = BigramModel::new(4, [(a, b, 0.5), (a, c, 0.5), (b, c, 0.2), (b, a, 0.8)]).unwrap();
        let lp = teacher_forced_logprobs(&m, &[a], &[b, c]).unwrap();
        assert!((lp[0] - 0.5f64.ln()).abs() < 1e-12);
        assert!((lp[1] - 0.2f64.ln()).abs() < 1e-12);
    }
}
