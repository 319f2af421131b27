//! The run configuration: one TOML document shared by every subcommand.
//!
//! Relative paths are resolved against the directory holding the config file.
//! Unknown keys anywhere in the document are rejected.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use forgetgen::classifier::ClassifierConfig;
use forgetgen::decoder::DecodeConfig;
use forgetgen::embedding::LayerIndex;
use forgetgen::forbidden::{parse_stopwords, ExtractionStrategy, KeyPhraseExtractor};
use forgetgen::matching::{HardMatchConfig, SoftMatchConfig};
use forgetgen::pipeline::{Ablation, GuardConfig, RetrievalSettings, DEFAULT_REFUSAL};
use forgetgen::retrieval::RetrievalKey;
use forgetgen::{Tokenizer, Vocabulary};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Toy,
    Bridge,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Toy => "toy",
            BackendKind::Bridge => "bridge",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub backend: BackendKind,
    /// Word list shared by the tokenizer and both backends.
    pub vocab: PathBuf,
    #[serde(default)]
    pub toy: ToySection,
    pub bridge: Option<BridgeSection>,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub index: IndexSection,
    #[serde(default)]
    pub guard: GuardSection,
    #[serde(default)]
    pub generate: GenerateSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,

    /// FNV-1a of the raw config text, recorded in artifacts.
    #[serde(skip)]
    pub config_hash: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySection {
    /// Bigram table (`prev next prob` lines). Required by the toy backend.
    pub bigram: Option<PathBuf>,
    pub hash_buckets: usize,
}

impl Default for ToySection {
    fn default() -> Self {
        ToySection {
            bigram: None,
            hash_buckets: 64,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeSection {
    /// Program and arguments that start the bridge process.
    pub command: Vec<String>,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    #[serde(default = "default_layer")]
    pub layer: i32,
}

fn default_layer() -> i32 {
    LayerIndex::default().0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    /// Labeled training data. Lines carry either `vector` or `prompt`, plus `label`.
    pub train: Option<PathBuf>,
    /// Held-out data for the rate report; the training set is used when absent.
    pub eval: Option<PathBuf>,
    /// Where parameters are written by `train-classifier` and read by the rest.
    pub params: Option<PathBuf>,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout_rate: f64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let c = ClassifierConfig::default();
        ClassifierSection {
            train: None,
            eval: None,
            params: None,
            hidden_dim: c.hidden_dim,
            learning_rate: c.learning_rate,
            epochs: c.epochs,
            dropout_rate: c.dropout_rate,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSection {
    /// Question–answer JSONL; forget-split records are indexed.
    pub records: Option<PathBuf>,
    pub key: RetrievalKey,
    /// Index JSON written by `build-index` and read by `generate`.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardSection {
    pub threshold: f64,
    pub refusal_text: String,
    pub retrieval: RetrievalSettings,
    pub extraction: ExtractionSection,
    pub decode: DecodeSection,
    pub hard: HardMatchConfig,
    pub soft: SoftMatchConfig,
    pub ablation: Ablation,
}

impl Default for GuardSection {
    fn default() -> Self {
        let d = DecodeConfig::default();
        GuardSection {
            threshold: 0.5,
            refusal_text: DEFAULT_REFUSAL.to_string(),
            retrieval: RetrievalSettings::default(),
            extraction: ExtractionSection::default(),
            decode: DecodeSection::default(),
            hard: d.hard,
            soft: d.soft,
            ablation: Ablation::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    #[default]
    AllWords,
    HalfWords,
    ConfidenceBased,
    External,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionSection {
    pub strategy: StrategyName,
    pub threshold: f64,
    pub stopwords: Option<PathBuf>,
}

impl Default for ExtractionSection {
    fn default() -> Self {
        ExtractionSection {
            strategy: StrategyName::AllWords,
            threshold: 0.5,
            stopwords: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub beam_width: usize,
    pub max_new_tokens: usize,
    pub expansion_fanout: Option<usize>,
    /// End-of-sequence word; must be in the vocabulary.
    pub eos: Option<String>,
}

impl Default for DecodeSection {
    fn default() -> Self {
        let d = DecodeConfig::default();
        DecodeSection {
            beam_width: d.beam_width,
            max_new_tokens: d.max_new_tokens,
            expansion_fanout: d.expansion_fanout,
            eos: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub prompts: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub unlearned: Option<PathBuf>,
    pub retained: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub bleu_max_n: usize,
    /// The nine scores that model utility aggregates.
    pub utility_scores: Option<Vec<f64>>,
    /// JSONL of `{text, prefix_tokens}` scored with guarded greedy decoding.
    pub verbmem: Option<PathBuf>,
    /// Question–answer JSONL scored with guarded greedy decoding.
    pub knowmem: Option<PathBuf>,
    pub max_new_tokens: usize,
    pub privleak: Option<PrivLeakSection>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            unlearned: None,
            retained: None,
            output: None,
            bleu_max_n: 4,
            utility_scores: None,
            verbmem: None,
            knowmem: None,
            max_new_tokens: forgetgen::metrics::muse::DEFAULT_MAX_NEW_TOKENS,
            privleak: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivLeakSection {
    /// Prompt JSONL of texts seen in training.
    pub members: PathBuf,
    pub nonmembers: PathBuf,
    #[serde(default = "default_k_fraction")]
    pub k_fraction: f64,
    /// AUC of the retrained reference model on the same split.
    pub auc_retrain: f64,
}

fn default_k_fraction() -> f64 {
    0.2
}

/// Values given on the command line that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub backend: Option<BackendKind>,
}

impl RunConfig {
    /// Reads, parses, applies overrides, resolves paths and validates.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, base, overrides)
    }

    pub fn from_toml(text: &str, base: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.config_hash = forgetgen::text::fnv1a(text.as_bytes());
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(backend) = overrides.backend {
            cfg.backend = backend;
        }
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.vocab);
        let optional = [
            &mut self.toy.bigram,
            &mut self.classifier.train,
            &mut self.classifier.eval,
            &mut self.classifier.params,
            &mut self.index.records,
            &mut self.index.path,
            &mut self.guard.extraction.stopwords,
            &mut self.generate.prompts,
            &mut self.generate.output,
            &mut self.evaluate.unlearned,
            &mut self.evaluate.retained,
            &mut self.evaluate.output,
            &mut self.evaluate.verbmem,
            &mut self.evaluate.knowmem,
        ];
        for p in optional.into_iter().flatten() {
            fix(p);
        }
        if let Some(pl) = &mut self.evaluate.privleak {
            fix(&mut pl.members);
            fix(&mut pl.nonmembers);
        }
    }

    /// Input files must exist. Artifacts produced by other subcommands
    /// (classifier parameters, index) are checked when they are read.
    fn validate(&self) -> Result<(), CliError> {
        let mut inputs: Vec<(&str, &Path)> = vec![("vocab", &self.vocab)];
        let optional = [
            ("toy.bigram", &self.toy.bigram),
            ("classifier.train", &self.classifier.train),
            ("classifier.eval", &self.classifier.eval),
            ("index.records", &self.index.records),
            ("guard.extraction.stopwords", &self.guard.extraction.stopwords),
            ("generate.prompts", &self.generate.prompts),
            ("evaluate.unlearned", &self.evaluate.unlearned),
            ("evaluate.retained", &self.evaluate.retained),
            ("evaluate.verbmem", &self.evaluate.verbmem),
            ("evaluate.knowmem", &self.evaluate.knowmem),
        ];
        for (key, p) in optional {
            if let Some(p) = p {
                inputs.push((key, p));
            }
        }
        if let Some(pl) = &self.evaluate.privleak {
            inputs.push(("evaluate.privleak.members", &pl.members));
            inputs.push(("evaluate.privleak.nonmembers", &pl.nonmembers));
        }
        for (key, p) in inputs {
            if !p.is_file() {
                return Err(CliError::Config(format!("{key}: file not found: {}", p.display())));
            }
        }

        match self.backend {
            BackendKind::Toy if self.toy.bigram.is_none() => {
                return Err(CliError::Config("toy backend needs toy.bigram".into()));
            }
            BackendKind::Toy if self.guard.extraction.strategy == StrategyName::External => {
                return Err(CliError::Config("external extraction needs the bridge backend".into()));
            }
            BackendKind::Bridge => match &self.bridge {
                None => return Err(CliError::Config("bridge backend needs a [bridge] section".into())),
                Some(b) if b.command.is_empty() => {
                    return Err(CliError::Config("bridge.command is empty".into()));
                }
                Some(b) if b.hidden_dim == 0 || b.embed_dim == 0 => {
                    return Err(CliError::Config("bridge dimensions must be positive".into()));
                }
                Some(_) => {}
            },
            BackendKind::Toy => {}
        }
        self.classifier_config()
            .validate()
            .map_err(|e| CliError::Config(format!("classifier: {e}")))?;
        if !(self.guard.threshold > 0.0 && self.guard.threshold < 1.0) {
            return Err(CliError::Config("guard.threshold must lie in (0, 1)".into()));
        }
        if self.guard.retrieval.k == 0 {
            return Err(CliError::Config("guard.retrieval.k must be positive".into()));
        }
        let e = &self.guard.extraction;
        if !(0.0..=1.0).contains(&e.threshold) {
            return Err(CliError::Config("guard.extraction.threshold must lie in [0, 1]".into()));
        }
        self.guard
            .hard
            .validate()
            .map_err(|e| CliError::Config(format!("guard.hard: {e}")))?;
        self.guard
            .soft
            .validate()
            .map_err(|e| CliError::Config(format!("guard.soft: {e}")))?;
        let d = &self.guard.decode;
        if d.beam_width == 0 || d.max_new_tokens == 0 || d.expansion_fanout == Some(0) {
            return Err(CliError::Config(
                "guard.decode beam_width, max_new_tokens and expansion_fanout must be positive".into(),
            ));
        }
        if self.evaluate.bleu_max_n == 0 {
            return Err(CliError::Config("evaluate.bleu_max_n must be positive".into()));
        }
        if self.evaluate.max_new_tokens == 0 {
            return Err(CliError::Config("evaluate.max_new_tokens must be positive".into()));
        }
        if let Some(scores) = &self.evaluate.utility_scores {
            if scores.len() != forgetgen::metrics::tofu::UTILITY_SCORE_COUNT {
                return Err(CliError::Config(format!(
                    "evaluate.utility_scores needs {} values, found {}",
                    forgetgen::metrics::tofu::UTILITY_SCORE_COUNT,
                    scores.len()
                )));
            }
        }
        if let Some(pl) = &self.evaluate.privleak {
            if !(pl.k_fraction > 0.0 && pl.k_fraction <= 1.0) {
                return Err(CliError::Config("evaluate.privleak.k_fraction must lie in (0, 1]".into()));
            }
            if !(pl.auc_retrain > 0.0 && pl.auc_retrain <= 1.0) {
                return Err(CliError::Config("evaluate.privleak.auc_retrain must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        let c = &self.classifier;
        ClassifierConfig {
            hidden_dim: c.hidden_dim,
            learning_rate: c.learning_rate,
            epochs: c.epochs,
            dropout_rate: c.dropout_rate,
            decision_threshold: self.guard.threshold,
            seed: self.seed,
        }
    }

    pub fn layer(&self) -> LayerIndex {
        LayerIndex(self.bridge.as_ref().map_or_else(default_layer, |b| b.layer))
    }

    pub fn vocabulary(&self) -> Result<Vocabulary, CliError> {
        Ok(Vocabulary::load(&self.vocab)?)
    }

    /// Builds the core guard configuration. `extractor` backs the external
    /// strategy and must be present when that strategy is selected.
    pub fn guard_config(
        &self,
        tokenizer: &dyn Tokenizer,
        vocab: &Vocabulary,
        extractor: Option<Arc<dyn KeyPhraseExtractor>>,
    ) -> Result<GuardConfig, CliError> {
        let g = &self.guard;
        let extraction = match g.extraction.strategy {
            StrategyName::AllWords => ExtractionStrategy::AllWords,
            StrategyName::HalfWords => ExtractionStrategy::HalfWords,
            StrategyName::ConfidenceBased => {
                let stopwords = match &g.extraction.stopwords {
                    Some(p) => parse_stopwords(&read_text(p)?),
                    None => HashSet::new(),
                };
                ExtractionStrategy::ConfidenceBased {
                    threshold: g.extraction.threshold,
                    stopwords,
                }
            }
            StrategyName::External => ExtractionStrategy::External(
                extractor.ok_or_else(|| CliError::Config("external extraction needs the bridge backend".into()))?,
            ),
        };
        let eos_token = match &g.decode.eos {
            Some(word) => Some(
                vocab
                    .id(word)
                    .ok_or_else(|| CliError::Config(format!("guard.decode.eos {word:?} is not in the vocabulary")))?,
            ),
            None => None,
        };
        debug_assert_eq!(tokenizer.vocab_size(), vocab.len());
        Ok(GuardConfig {
            threshold: g.threshold,
            retrieval: g.retrieval,
            extraction,
            decode: DecodeConfig {
                beam_width: g.decode.beam_width,
                max_new_tokens: g.decode.max_new_tokens,
                expansion_fanout: g.decode.expansion_fanout,
                eos_token,
                hard: g.hard,
                soft: g.soft,
            },
            refusal_text: g.refusal_text.clone(),
            ablation: g.ablation,
        })
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
