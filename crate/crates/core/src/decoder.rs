//! Penalized beam search.
//!
//! Every live beam is extended with its top `expansion_fanout` next tokens.
//! Each extension costs `-log p(token | context)` plus the total penalty of
//! the extended sequence; extensions with an infinite penalty or zero
//! probability are pruned. Survivors from all beams, together with beams that
//! already emitted EOS, are ranked by cumulative cost and the best
//! `beam_width` are kept.

use std::cmp::Ordering;

use serde::Serialize;

use crate::embedding::Embedder;
use crate::forbidden::ForbiddenSet;
use crate::matching::{token_penalty, HardMatchConfig, Penalty, PhraseTrie, SemanticMatcher, SoftMatchConfig};
use crate::model::{is_log_zero, LanguageModel, TokenId, TokenSequence};
use crate::text::last_word;
use crate::tokenizer::Tokenizer;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub max_new_tokens: usize,
    /// Tokens tried per live beam; `None` means `beam_width`.
    pub expansion_fanout: Option<usize>,
    pub eos_token: Option<TokenId>,
    pub hard: HardMatchConfig,
    pub soft: SoftMatchConfig,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_width: 7,
            max_new_tokens: 32,
            expansion_fanout: None,
            eos_token: None,
            hard: HardMatchConfig::default(),
            soft: SoftMatchConfig::default(),
        }
    }
}

impl DecodeConfig {
    pub fn greedy(max_new_tokens: usize, eos_token: Option<TokenId>) -> Self {
        DecodeConfig {
            beam_width: 1,
            max_new_tokens,
            expansion_fanout: Some(1),
            eos_token,
            ..DecodeConfig::default()
        }
    }

    pub fn fanout(&self) -> usize {
        self.expansion_fanout.unwrap_or(self.beam_width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::invalid("beam_width must be positive"));
        }
        if self.fanout() == 0 {
            return Err(Error::invalid("expansion_fanout must be positive"));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::invalid("max_new_tokens must be positive"));
        }
        self.hard.validate()?;
        self.soft.validate()
    }
}

/// Forbidden content compiled for decoding.
pub struct Constraints<'a> {
    trie: PhraseTrie,
    semantic: Option<SemanticMatcher<'a>>,
}

impl<'a> Constraints<'a> {
    /// No penalties at all: plain beam search.
    pub fn none() -> Self {
        Constraints {
            trie: PhraseTrie::new(),
            semantic: None,
        }
    }

    pub fn new(set: &ForbiddenSet, embedder: &'a dyn Embedder) -> Result<Self> {
        Ok(Constraints {
            trie: PhraseTrie::build(set),
            semantic: Some(SemanticMatcher::new(set, embedder)?),
        })
    }

    pub fn from_parts(trie: PhraseTrie, semantic: Option<SemanticMatcher<'a>>) -> Self {
        Constraints { trie, semantic }
    }

    pub fn trie(&self) -> &PhraseTrie {
        &self.trie
    }
}

/// Hard plus soft penalty of `candidate` (generated tokens only). The soft
/// term is only evaluated once the newest token completes a word, and never
/// for EOS.
pub fn total_penalty(
    candidate: &[TokenId],
    constraints: &Constraints<'_>,
    tok: &dyn Tokenizer,
    cfg: &DecodeConfig,
) -> Result<Penalty> {
    let hard = token_penalty(&constraints.trie, candidate, &cfg.hard);
    if hard.is_infinite() {
        return Ok(hard);
    }
    let Some(semantic) = &constraints.semantic else {
        return Ok(hard);
    };
    let newest = candidate.last().copied();
    if newest.is_none() || newest == cfg.eos_token || !tok.completes_word(candidate) {
        return Ok(hard);
    }
    let text = tok.detokenize(candidate)?;
    Ok(hard + semantic.penalty(last_word(&text), &cfg.soft)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepCost {
    Cost(f64),
    Prune,
}

/// `-logprob + penalty`, or [`StepCost::Prune`] for an infinite penalty or a
/// zero-probability token.
pub fn step_cost(logprob_next: f64, penalty: Penalty) -> StepCost {
    match penalty {
        Penalty::Infinite => StepCost::Prune,
        _ if is_log_zero(logprob_next) => StepCost::Prune,
        Penalty::Finite(p) => StepCost::Cost((-logprob_next).max(0.0) + p),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeamCandidate {
    /// Generated tokens, prompt excluded.
    pub tokens: TokenSequence,
    pub cumulative_cost: f64,
    pub finished: bool,
    pub last_step_penalty: Penalty,
    /// Cost added at each step; sums to `cumulative_cost`.
    pub step_costs: Vec<f64>,
}

impl BeamCandidate {
    fn root() -> Self {
        BeamCandidate {
            tokens: Vec::new(),
            cumulative_cost: 0.0,
            finished: false,
            last_step_penalty: Penalty::ZERO,
            step_costs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeResult {
    /// Lowest-cost finished beam (or lowest-cost beam when none finished),
    /// generated tokens only. Empty when fully blocked.
    pub best: TokenSequence,
    pub best_cost: f64,
    pub all_beams: Vec<BeamCandidate>,
    pub steps_taken: usize,
    pub pruned_count: usize,
    /// Every extension was pruned at some step.
    pub fully_blocked: bool,
}

struct Ranked {
    beam: BeamCandidate,
    token: TokenId,
    parent: usize,
}

fn rank(a: &Ranked, b: &Ranked) -> Ordering {
    a.beam
        .cumulative_cost
        .total_cmp(&b.beam.cumulative_cost)
        .then(a.token.cmp(&b.token))
        .then(a.parent.cmp(&b.parent))
}

/// Indices of the `m` highest log-probabilities, ties to the lower id.
fn top_tokens(logprobs: &[f64], m: usize) -> Vec<TokenId> {
    let mut order: Vec<usize> = (0..logprobs.len()).collect();
    order.sort_by(|&a, &b| logprobs[b].total_cmp(&logprobs[a]).then(a.cmp(&b)));
    order.truncate(m);
    order.into_iter().map(|i| TokenId(i as u32)).collect()
}

pub fn decode(
    model: &dyn LanguageModel,
    tok: &dyn Tokenizer,
    prompt: &[TokenId],
    constraints: &Constraints<'_>,
    cfg: &DecodeConfig,
) -> Result<DecodeResult> {
    cfg.validate()?;
    let vocab = model.vocab_size();
    if let Some(eos) = cfg.eos_token {
        if eos.index() >= vocab {
            return Err(Error::invalid(format!("eos token {} outside vocabulary of {vocab}", eos.0)));
        }
    }
    crate::model::check_context(prompt, vocab)?;
    let fanout = cfg.fanout().min(vocab);

    let mut beams = vec![BeamCandidate::root()];
    let mut steps_taken = 0;
    let mut pruned_count = 0;
    let mut context: Vec<TokenId> = Vec::with_capacity(prompt.len() + cfg.max_new_tokens);

    while steps_taken < cfg.max_new_tokens && !beams.iter().all(|b| b.finished) {
        let mut pool: Vec<Ranked> = Vec::new();
        for (parent, beam) in beams.iter().enumerate() {
            if beam.finished {
                let token = *beam.tokens.last().expect("finished beams end in EOS");
                pool.push(Ranked { beam: beam.clone(), token, parent });
                continue;
            }
            context.clear();
            context.extend_from_slice(prompt);
            context.extend_from_slice(&beam.tokens);
            let logprobs = model.next_token_logprobs(&context)?;
            if logprobs.len() != vocab {
                return Err(Error::invalid(format!(
                    "model returned {} log-probabilities for vocabulary of {vocab}",
                    logprobs.len()
                )));
            }
            for token in top_tokens(&logprobs, fanout) {
                let mut tokens = beam.tokens.clone();
                tokens.push(token);
                let penalty = total_penalty(&tokens, constraints, tok, cfg)?;
                match step_cost(logprobs[token.index()], penalty) {
                    StepCost::Prune => pruned_count += 1,
                    StepCost::Cost(c) => {
                        let mut step_costs = beam.step_costs.clone();
                        step_costs.push(c);
                        pool.push(Ranked {
                            beam: BeamCandidate {
                                finished: Some(token) == cfg.eos_token,
                                tokens,
                                cumulative_cost: beam.cumulative_cost + c,
                                last_step_penalty: penalty,
                                step_costs,
                            },
                            token,
                            parent,
                        });
                    }
                }
            }
        }
        steps_taken += 1;
        if pool.is_empty() {
            return Ok(DecodeResult {
                best: Vec::new(),
                best_cost: 0.0,
                all_beams: Vec::new(),
                steps_taken,
                pruned_count,
                fully_blocked: true,
            });
        }
        pool.sort_by(rank);
        pool.truncate(cfg.beam_width);
        beams = pool.into_iter().map(|r| r.beam).collect();
    }

    let best = beams
        .iter()
        .filter(|b| b.finished)
        .min_by(|a, b| a.cumulative_cost.total_cmp(&b.cumulative_cost))
        .or_else(|| beams.iter().min_by(|a, b| a.cumulative_cost.total_cmp(&b.cumulative_cost)))
        .expect("at least one beam survives");
    Ok(DecodeResult {
        best: best.tokens.clone(),
        best_cost: best.cumulative_cost,
        steps_taken,
        pruned_count,
        fully_blocked: false,
        all_beams: beams,
    })
}
