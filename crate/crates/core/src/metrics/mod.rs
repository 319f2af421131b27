//! Evaluation metrics.

pub mod lexical;
pub mod muse;
pub mod report;
pub mod tofu;

pub use lexical::{bleu, rouge_l_f1, rouge_l_recall};
pub use muse::{auc_roc, knowmem, min_k_score, priv_leak, verbmem, GreedyGenerator, TextGenerator, VerbatimExample};
pub use report::{MetricReport, MetricValue};
pub use tofu::{
    answer_probability_ratio, forget_quality, fq_gap, ks_two_sample, model_utility,
    normalized_answer_probability, truth_ratio, KsResult, LexicalPair, ScoredAnswer,
};
