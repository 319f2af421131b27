//! Memorization and membership-inference scores.

use crate::data::{Prompt, QaPair};
use crate::decoder::{decode, Constraints, DecodeConfig};
use crate::metrics::lexical::rouge_l_f1;
use crate::model::{teacher_forced_logprobs, LanguageModel, TokenId};
use crate::pipeline::Guard;
use crate::tokenizer::Tokenizer;
use crate::{Error, Result};

pub const DEFAULT_MAX_NEW_TOKENS: usize = 128;

/// Anything that turns a prompt into a completion.
pub trait TextGenerator: Sync {
    fn generate_text(&self, prompt: &str) -> Result<String>;
}

/// Unpenalized greedy decoding.
pub struct GreedyGenerator<'a> {
    pub model: &'a dyn LanguageModel,
    pub tokenizer: &'a dyn Tokenizer,
    pub max_new_tokens: usize,
    pub eos_token: Option<TokenId>,
}

impl<'a> GreedyGenerator<'a> {
    pub fn new(model: &'a dyn LanguageModel, tokenizer: &'a dyn Tokenizer) -> Self {
        GreedyGenerator {
            model,
            tokenizer,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            eos_token: None,
        }
    }

    pub fn with_eos(mut self, eos: TokenId) -> Self {
        self.eos_token = Some(eos);
        self
    }
}

impl TextGenerator for GreedyGenerator<'_> {
    fn generate_text(&self, prompt: &str) -> Result<String> {
        let cfg = DecodeConfig::greedy(self.max_new_tokens, self.eos_token);
        let context = self.tokenizer.tokenize(prompt);
        let result = decode(self.model, self.tokenizer, &context, &Constraints::none(), &cfg)?;
        let mut tokens = result.best.as_slice();
        if let (Some(eos), Some((&last, rest))) = (self.eos_token, tokens.split_last()) {
            if last == eos {
                tokens = rest;
            }
        }
        self.tokenizer.detokenize(tokens)
    }
}

impl TextGenerator for Guard<'_> {
    fn generate_text(&self, prompt: &str) -> Result<String> {
        Ok(self.generate(&Prompt::new(prompt)?)?.output)
    }
}

/// A text and the number of leading tokens given to the model as a prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct VerbatimExample {
    pub text: String,
    pub prefix_tokens: usize,
}

fn mean_percent(scores: &[f64], what: &str) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid(format!("{what}: no usable examples")));
    }
    Ok(100.0 * scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Mean ROUGE-L F1 (×100) between the generated continuation of each prefix
/// and the true continuation. Texts no longer than their prefix are skipped.
pub fn verbmem(
    generator: &dyn TextGenerator,
    tok: &dyn Tokenizer,
    examples: &[VerbatimExample],
) -> Result<f64> {
    let mut scores = Vec::with_capacity(examples.len());
    for (i, ex) in examples.iter().enumerate() {
        let tokens = tok.tokenize(&ex.text);
        if tokens.len() <= ex.prefix_tokens {
            log::warn!(
                "verbmem example {i}: {} tokens, prefix {}; skipped",
                tokens.len(),
                ex.prefix_tokens
            );
            continue;
        }
        let (prefix, rest) = tokens.split_at(ex.prefix_tokens);
        let reference = tok.detokenize(rest)?;
        let continuation = generator.generate_text(&tok.detokenize(prefix)?)?;
        scores.push(rouge_l_f1(&reference, &continuation)?);
    }
    mean_percent(&scores, "verbmem")
}

/// Mean ROUGE-L F1 (×100) between generated and gold answers.
pub fn knowmem(generator: &dyn TextGenerator, qa: &[QaPair]) -> Result<f64> {
    let scores = qa
        .iter()
        .map(|pair| rouge_l_f1(&pair.answer, &generator.generate_text(&pair.question)?))
        .collect::<Result<Vec<_>>>()?;
    mean_percent(&scores, "knowmem")
}

/// Mean of the lowest `⌈k·n⌉` teacher-forced token log-probabilities of
/// `text`, the first token conditioned on an empty context.
pub fn min_k_score(
    model: &dyn LanguageModel,
    tok: &dyn Tokenizer,
    text: &str,
    k_fraction: f64,
) -> Result<f64> {
    if !(k_fraction > 0.0 && k_fraction <= 1.0) {
        return Err(Error::invalid(format!("k fraction {k_fraction} outside (0, 1]")));
    }
    let tokens = tok.tokenize(text);
    if tokens.is_empty() {
        return Err(Error::invalid("min-k score needs at least one token"));
    }
    let mut logprobs = teacher_forced_logprobs(model, &[], &tokens)?;
    logprobs.sort_by(f64::total_cmp);
    let keep = ((k_fraction * logprobs.len() as f64).ceil() as usize).clamp(1, logprobs.len());
    Ok(logprobs[..keep].iter().sum::<f64>() / keep as f64)
}

/// Probability that a member score exceeds a nonmember score, ties counted
/// one half. Computed from average ranks.
pub fn auc_roc(members: &[f64], nonmembers: &[f64]) -> Result<f64> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::invalid("AUC needs members and nonmembers"));
    }
    if members.iter().chain(nonmembers).any(|v| v.is_nan()) {
        return Err(Error::invalid("AUC scores must not be NaN"));
    }
    let mut all: Vec<(f64, bool)> = members
        .iter()
        .map(|&v| (v, true))
        .chain(nonmembers.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut member_rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        member_rank_sum += avg_rank * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (n, m) = (members.len() as f64, nonmembers.len() as f64);
    Ok((member_rank_sum - n * (n + 1.0) / 2.0) / (n * m))
}

/// Relative AUC deviation from the retrained model, in percent.
pub fn priv_leak(auc_unlearn: f64, auc_retrain: f64) -> Result<f64> {
    if auc_retrain == 0.0 || !auc_retrain.is_finite() || !auc_unlearn.is_finite() {
        return Err(Error::invalid("privacy leak needs a finite, nonzero retrained AUC"));
    }
    Ok(100.0 * (auc_unlearn - auc_retrain) / auc_retrain)
}
