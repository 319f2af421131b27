//! End-to-end guarded generation: classify → retrieve → extract → constrained
//! decode. Retain-routed prompts are decoded with the same beam settings and
//! no penalties.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{MlpParameters, Route};
use crate::data::Prompt;
use crate::decoder::{decode, Constraints, DecodeConfig};
use crate::embedding::{embed_text, Embedder};
use crate::forbidden::{extract, ExtractionStrategy, ForbiddenSet};
use crate::matching::{PhraseTrie, SemanticMatcher};
use crate::model::{LanguageModel, TokenId};
use crate::retrieval::{AnswerIndex, Reranker};
use crate::tokenizer::Tokenizer;
use crate::{Error, Result, Stage};

pub const DEFAULT_REFUSAL: &str = "I'm not sure.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSettings {
    pub rerank: bool,
    pub k: usize,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        RetrievalSettings { rerank: false, k: 5 }
    }
}

/// Component switches for ablations. Both on in normal operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    pub trie: bool,
    pub semantic: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation { trie: true, semantic: true }
    }
}

#[derive(Debug, Clone)]
pub struct GuardConfig {
    pub threshold: f64,
    pub retrieval: RetrievalSettings,
    pub extraction: ExtractionStrategy,
    pub decode: DecodeConfig,
    pub refusal_text: String,
    pub ablation: Ablation,
}

impl Default for GuardConfig {
    fn default() -> Self {
        GuardConfig {
            threshold: 0.5,
            retrieval: RetrievalSettings::default(),
            extraction: ExtractionStrategy::AllWords,
            decode: DecodeConfig::default(),
            refusal_text: DEFAULT_REFUSAL.to_string(),
            ablation: Ablation::default(),
        }
    }
}

/// Borrowed model, tokenizer and component handles.
#[derive(Clone, Copy)]
pub struct Handles<'a> {
    pub model: &'a dyn LanguageModel,
    pub tokenizer: &'a dyn Tokenizer,
    pub classifier: &'a MlpParameters,
    /// Produces the classifier's input embedding for a prompt.
    pub prompt_embedder: &'a dyn Embedder,
    pub index: &'a AnswerIndex,
    pub retrieval_embedder: &'a dyn Embedder,
    pub reranker: Option<&'a dyn Reranker>,
    /// Embeds generated words and forbidden spans for soft matching.
    pub semantic_embedder: &'a dyn Embedder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardOutcome {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub route: Route,
    /// Position of the retrieved record in the forget index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_record: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forbidden_span_count: Option<usize>,
    pub output: String,
    pub blocked: bool,
}

pub struct Guard<'a> {
    handles: Handles<'a>,
    config: GuardConfig,
}

impl<'a> Guard<'a> {
    pub fn new(handles: Handles<'a>, config: GuardConfig) -> Result<Self> {
        config.decode.validate()?;
        if !(config.threshold > 0.0 && config.threshold < 1.0) {
            return Err(Error::invalid("classifier threshold must lie in (0, 1)"));
        }
        if config.retrieval.rerank && handles.reranker.is_none() {
            return Err(Error::invalid("reranking enabled but no reranker supplied"));
        }
        if config.retrieval.k == 0 {
            return Err(Error::invalid("retrieval k must be positive"));
        }
        if handles.tokenizer.vocab_size() != handles.model.vocab_size() {
            return Err(Error::invalid("tokenizer and model vocabularies differ in size"));
        }
        Ok(Guard { handles, config })
    }

    pub fn config(&self) -> &GuardConfig {
        &self.config
    }

    pub fn route(&self, prompt: &Prompt) -> Result<Route> {
        let z = embed_text(self.handles.prompt_embedder, &prompt.text)?;
        self.handles.classifier.classify(&z, self.config.threshold)
    }

    /// Forbidden set for a forget-routed prompt and the retrieved position.
    pub fn forbidden_for(&self, prompt: &Prompt) -> Result<(usize, ForbiddenSet)> {
        let h = &self.handles;
        let hit = match (self.config.retrieval.rerank, h.reranker) {
            (true, Some(r)) => h.index.retrieve_rerank(prompt, h.retrieval_embedder, r, self.config.retrieval.k),
            _ => h.index.retrieve_top1(prompt, h.retrieval_embedder),
        }
        .map_err(|e| e.at_stage(Stage::Retrieve))?;
        let set = extract(&hit.record.answer, &self.config.extraction, h.model, h.tokenizer)
            .map_err(|e| e.at_stage(Stage::Extract))?;
        Ok((hit.position, set))
    }

    fn constraints(&self, set: &ForbiddenSet) -> Result<Constraints<'a>> {
        let ab = self.config.ablation;
        let trie = if ab.trie { PhraseTrie::build(set) } else { PhraseTrie::new() };
        let semantic = if ab.semantic {
            Some(SemanticMatcher::new(set, self.handles.semantic_embedder)?)
        } else {
            None
        };
        Ok(Constraints::from_parts(trie, semantic))
    }

    /// Decodes `prompt` under `constraints`; `None` when fully blocked.
    fn run_decode(&self, prompt: &Prompt, constraints: &Constraints<'_>) -> Result<Option<String>> {
        let h = &self.handles;
        let prompt_tokens = h.tokenizer.tokenize(&prompt.text);
        let result = decode(h.model, h.tokenizer, &prompt_tokens, constraints, &self.config.decode)?;
        if result.fully_blocked {
            return Ok(None);
        }
        let mut tokens: &[TokenId] = &result.best;
        if let (Some(eos), Some(&last)) = (self.config.decode.eos_token, tokens.last()) {
            if last == eos {
                tokens = &tokens[..tokens.len() - 1];
            }
        }
        Ok(Some(h.tokenizer.detokenize(tokens)?))
    }

    /// Beam search with no penalties.
    pub fn plain_generate(&self, prompt: &Prompt) -> Result<String> {
        Ok(self.run_decode(prompt, &Constraints::none())?.unwrap_or_default())
    }

    pub fn generate(&self, prompt: &Prompt) -> Result<GuardOutcome> {
        prompt.validate()?;
        let route = self.route(prompt).map_err(|e| e.at_stage(Stage::Classify))?;
        let id = prompt.id.clone();
        match route {
            Route::Retain => {
                let output = self.plain_generate(prompt).map_err(|e| e.at_stage(Stage::Decode))?;
                Ok(GuardOutcome {
                    id,
                    route,
                    retrieved_record: None,
                    forbidden_span_count: None,
                    output,
                    blocked: false,
                })
            }
            Route::Forget => {
                let (position, set) = self.forbidden_for(prompt)?;
                let decoded = self
                    .constraints(&set)
                    .and_then(|c| self.run_decode(prompt, &c))
                    .map_err(|e| e.at_stage(Stage::Decode))?;
                let blocked = decoded.is_none();
                Ok(GuardOutcome {
                    id,
                    route,
                    retrieved_record: Some(position),
                    forbidden_span_count: Some(set.len()),
                    output: decoded.unwrap_or_else(|| self.config.refusal_text.clone()),
                    blocked,
                })
            }
        }
    }

    /// Element-wise [`generate`](Self::generate), order preserved; one
    /// failing prompt does not stop the rest.
    pub fn generate_batch(&self, prompts: &[Prompt]) -> Vec<Result<GuardOutcome>> {
        prompts.par_iter().map(|p| self.generate(p)).collect()
    }
}
