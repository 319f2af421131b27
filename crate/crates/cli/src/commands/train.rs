use std::path::{Path, PathBuf};

use forgetgen::classifier::{evaluate_rates, train, Label, LabeledEmbedding, Rates};
use forgetgen::embedding::{embed_text, Embedder, Embedding};
use serde::{Deserialize, Serialize};

use super::write_output;
use crate::backend::Backend;
use crate::config::{read_text, RunConfig};
use crate::error::CliError;

/// One labeled example: a precomputed vector or a prompt the backend embeds.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabeledLine {
    vector: Option<Vec<f64>>,
    prompt: Option<String>,
    label: Label,
}

/// Summary written next to the parameter file and to stdout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub config_hash: String,
    pub train_examples: usize,
    /// File the rates were measured on.
    pub evaluated_on: String,
    pub rates: Rates,
}

pub(crate) fn load_labeled(path: &Path, embedder: &dyn Embedder) -> Result<Vec<LabeledEmbedding>, CliError> {
    let text = read_text(path)?;
    let mut out: Vec<LabeledEmbedding> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |message: String| CliError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let item: LabeledLine = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
        let vector = match (item.vector, item.prompt) {
            (Some(v), None) => Embedding(v),
            (None, Some(p)) => embed_text(embedder, &p).map_err(|e| at(e.to_string()))?,
            _ => return Err(at("exactly one of `vector` and `prompt` is required".into())),
        };
        if vector.dim() == 0 || !vector.is_finite() {
            return Err(at("vector must be non-empty and finite".into()));
        }
        if let Some(first) = out.first() {
            if first.vector.dim() != vector.dim() {
                return Err(at(format!(
                    "vector dimension {} differs from {}",
                    vector.dim(),
                    first.vector.dim()
                )));
            }
        }
        out.push(LabeledEmbedding {
            vector,
            label: item.label,
        });
    }
    if out.is_empty() {
        return Err(CliError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "no labeled examples".into(),
        });
    }
    Ok(out)
}

/// Sidecar path for the rate report: `params.json` → `params.report.json`.
pub(crate) fn report_path(params: &Path) -> PathBuf {
    params.with_extension("report.json")
}

pub fn cmd_train_classifier(cfg: &RunConfig, out: Option<&Path>) -> Result<TrainReport, CliError> {
    let train_path = cfg
        .classifier
        .train
        .as_deref()
        .ok_or_else(|| CliError::Config("classifier.train is not set".into()))?;
    let params_path = out
        .or(cfg.classifier.params.as_deref())
        .ok_or_else(|| CliError::Usage("no output path: pass --out or set classifier.params".into()))?;

    let backend = Backend::open(cfg)?;
    let data = load_labeled(train_path, backend.prompt_embedder())?;
    let classifier_cfg = cfg.classifier_config();
    log::info!("training on {} examples from {}", data.len(), train_path.display());
    let params = train(&data, &classifier_cfg)?;

    let (eval_path, eval_data) = match &cfg.classifier.eval {
        Some(p) => (p.as_path(), load_labeled(p, backend.prompt_embedder())?),
        None => (train_path, data.clone()),
    };
    let rates = evaluate_rates(&params, &eval_data, classifier_cfg.decision_threshold)?;
    let report = TrainReport {
        seed: cfg.seed,
        config_hash: format!("{:016x}", cfg.config_hash),
        train_examples: data.len(),
        evaluated_on: eval_path.display().to_string(),
        rates,
    };

    write_output(Some(params_path), &params.to_json()?)?;
    let report_json = serde_json::to_string_pretty(&report).map_err(forgetgen::Error::from)? + "\n";
    write_output(Some(&report_path(params_path)), &report_json)?;
    write_output(None, &report_json)?;
    Ok(report)
}
