//! Generation-time unlearning.
//!
//! A prompt is routed by a small MLP classifier. Prompts that target forgotten
//! records are matched against the forget set, the matching answer is reduced
//! to a set of forbidden spans, and generation runs a penalized beam search
//! that hard-blocks forbidden token sequences through a phrase trie and
//! soft-blocks near-synonyms through embedding similarity. Prompts routed to
//! the retain side are decoded with the same beam search and no penalties.
//!
//! The [`metrics`] module carries the evaluation stack used to score
//! unlearning quality (ROUGE-L, BLEU, truth ratio, KS forget quality, model
//! utility, memorization and privacy-leak scores).

pub mod bridge;
pub mod classifier;
pub mod data;
pub mod decoder;
pub mod embedding;
mod error;
pub mod forbidden;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod retrieval;
pub mod text;
pub mod tokenizer;

pub use error::{Error, Result, Stage};
pub use model::{LanguageModel, TokenId, TokenSequence};
pub use tokenizer::{Tokenizer, Vocabulary, WhitespaceTokenizer};
