//! Candidate penalties: token-level hard matching against a phrase trie and
//! embedding-based soft matching of the last generated word.

mod trie;

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_or_zero, embed_text, Embedder, Embedding};
use crate::forbidden::ForbiddenSet;
use crate::model::TokenId;
use crate::{Error, Result};

pub use trie::{PhraseTrie, SuffixMatch};

/// A nonnegative penalty or the absorbing infinite penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    Finite(f64),
    Infinite,
}

impl Penalty {
    pub const ZERO: Penalty = Penalty::Finite(0.0);

    pub fn is_infinite(self) -> bool {
        matches!(self, Penalty::Infinite)
    }

    pub fn finite_value(self) -> Option<f64> {
        match self {
            Penalty::Finite(v) => Some(v),
            Penalty::Infinite => None,
        }
    }
}

impl Add for Penalty {
    type Output = Penalty;

    fn add(self, rhs: Penalty) -> Penalty {
        match (self, rhs) {
            (Penalty::Finite(a), Penalty::Finite(b)) => Penalty::Finite(a + b),
            _ => Penalty::Infinite,
        }
    }
}

/// How matches of length at least `beta` are treated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HardMatchRule {
    /// Complete matches and matches reaching `beta` tokens are pruned.
    #[default]
    Threshold,
    /// Only complete matches are pruned; partial matches of `beta` or more
    /// tokens are free, shorter ones cost `alpha_token` per token.
    CasesOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardMatchConfig {
    pub alpha_token: f64,
    pub beta: usize,
    #[serde(default)]
    pub rule: HardMatchRule,
}

impl Default for HardMatchConfig {
    fn default() -> Self {
        HardMatchConfig {
            alpha_token: 1.0,
            beta: 1,
            rule: HardMatchRule::Threshold,
        }
    }
}

impl HardMatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_token >= 0.0 && self.alpha_token.is_finite()) {
            return Err(Error::invalid("alpha_token must be a nonnegative number"));
        }
        if self.beta == 0 {
            return Err(Error::invalid("beta must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftMatchConfig {
    pub alpha_sbert: f64,
    pub delta: f64,
}

impl Default for SoftMatchConfig {
    fn default() -> Self {
        SoftMatchConfig {
            alpha_sbert: 1.0,
            delta: 0.5,
        }
    }
}

impl SoftMatchConfig {
    /// Settings under which the soft penalty is identically zero.
    pub fn disabled() -> Self {
        SoftMatchConfig {
            alpha_sbert: 0.0,
            delta: f64::INFINITY,
        }
    }

    /// `delta` outside (0, 1] is accepted so that values above 1 switch the
    /// infinite branch off.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_sbert >= 0.0 && self.alpha_sbert.is_finite()) {
            return Err(Error::invalid("alpha_sbert must be a nonnegative number"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::invalid("delta must be positive"));
        }
        Ok(())
    }
}

/// Hard-match penalty for a candidate token sequence.
pub fn token_penalty(trie: &PhraseTrie, candidate: &[TokenId], cfg: &HardMatchConfig) -> Penalty {
    let SuffixMatch { length, complete } = trie.longest_matched_suffix(candidate);
    if complete {
        return Penalty::Infinite;
    }
    let proportional = Penalty::Finite(cfg.alpha_token * length as f64);
    match cfg.rule {
        HardMatchRule::Threshold if length >= cfg.beta => Penalty::Infinite,
        HardMatchRule::Threshold => proportional,
        HardMatchRule::CasesOnly if length < cfg.beta => proportional,
        HardMatchRule::CasesOnly => Penalty::ZERO,
    }
}

/// Precomputed span embeddings for soft matching.
pub struct SemanticMatcher<'a> {
    embedder: &'a dyn Embedder,
    span_embeddings: Vec<Embedding>,
}

impl<'a> SemanticMatcher<'a> {
    pub fn new(set: &ForbiddenSet, embedder: &'a dyn Embedder) -> Result<Self> {
        let span_embeddings = set
            .spans()
            .iter()
            .map(|s| embed_text(embedder, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(SemanticMatcher {
            embedder,
            span_embeddings,
        })
    }

    /// Highest cosine similarity between `word` and any span; 0 with no spans.
    pub fn max_similarity(&self, word: &str) -> Result<f64> {
        if self.span_embeddings.is_empty() || word.trim().is_empty() {
            return Ok(0.0);
        }
        let w = embed_text(self.embedder, word)?;
        let mut best = f64::NEG_INFINITY;
        for e in &self.span_embeddings {
            best = best.max(cosine_or_zero(&w, e)?);
        }
        Ok(best)
    }

    /// Infinite when the best similarity reaches `delta`, otherwise
    /// `alpha_sbert` times the best similarity (negative similarity counts as 0).
    pub fn penalty(&self, last_word: &str, cfg: &SoftMatchConfig) -> Result<Penalty> {
        if last_word.trim().is_empty() || self.span_embeddings.is_empty() {
            return Ok(Penalty::ZERO);
        }
        let best = self.max_similarity(last_word)?;
        if best >= cfg.delta {
            Ok(Penalty::Infinite)
        } else {
            Ok(Penalty::Finite(cfg.alpha_sbert * best.max(0.0)))
        }
    }
}

/// One-shot soft-match penalty; prefer [`SemanticMatcher`] inside loops.
pub fn semantic_penalty(
    last_word: &str,
    set: &ForbiddenSet,
    embedder: &dyn Embedder,
    cfg: &SoftMatchConfig,
) -> Result<Penalty> {
    SemanticMatcher::new(set, embedder)?.penalty(last_word, cfg)
}
