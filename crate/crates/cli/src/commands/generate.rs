use std::path::Path;

use forgetgen::data::Prompt;
use forgetgen::pipeline::GuardOutcome;
use forgetgen::retrieval::CosineReranker;
use serde::{Deserialize, Serialize};

use super::{write_output, Artifacts};
use crate::backend::Backend;
use crate::config::{read_text, RunConfig};
use crate::error::CliError;

/// One output line: the outcome fields, or an `error` for a failed prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<forgetgen::classifier::Route>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_record: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forbidden_span_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocked: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GenerateLine {
    fn success(seed: u64, o: GuardOutcome) -> Self {
        GenerateLine {
            id: o.id,
            seed,
            route: Some(o.route),
            retrieved_record: o.retrieved_record,
            forbidden_span_count: o.forbidden_span_count,
            output: Some(o.output),
            blocked: Some(o.blocked),
            error: None,
        }
    }

    fn failure(seed: u64, id: Option<String>, error: String) -> Self {
        GenerateLine {
            id,
            seed,
            route: None,
            retrieved_record: None,
            forbidden_span_count: None,
            output: None,
            blocked: None,
            error: Some(error),
        }
    }
}

/// Parses each line on its own so one bad line does not sink the file.
fn parse_prompts(text: &str, path: &Path) -> Vec<Result<Prompt, (Option<String>, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let where_ = format!("{}:{}", path.display(), i + 1);
            match serde_json::from_str::<Prompt>(line) {
                Ok(p) => match p.validate() {
                    Ok(()) => Ok(p),
                    Err(e) => Err((p.id, format!("{where_}: {e}"))),
                },
                Err(e) => {
                    let id = serde_json::from_str::<serde_json::Value>(line)
                        .ok()
                        .and_then(|v| v.get("id").and_then(|id| id.as_str()).map(str::to_string));
                    Err((id, format!("{where_}: {e}")))
                }
            }
        })
        .collect()
}

/// Runs guarded generation over a prompt file. Every input line yields one
/// output line in the same order; failed lines carry `error`, and the call
/// returns [`CliError::ItemFailures`] after writing if any line failed.
pub fn cmd_generate(cfg: &RunConfig, prompts: Option<&Path>, out: Option<&Path>) -> Result<Vec<GenerateLine>, CliError> {
    let prompts_path = prompts
        .or(cfg.generate.prompts.as_deref())
        .ok_or_else(|| CliError::Usage("no prompt file: pass --prompts or set generate.prompts".into()))?;
    if !prompts_path.is_file() {
        return Err(CliError::Usage(format!("prompt file not found: {}", prompts_path.display())));
    }
    let out = out.or(cfg.generate.output.as_deref());
    let parsed = parse_prompts(&read_text(prompts_path)?, prompts_path);

    let backend = Backend::open(cfg)?;
    let artifacts = Artifacts::load(cfg, &backend)?;
    let reranker = CosineReranker {
        embedder: backend.sentence_embedder(),
    };
    let guard_cfg = cfg.guard_config(&backend.tokenizer, &backend.vocab, backend.extractor())?;
    let guard = artifacts.guard(&backend, &reranker, guard_cfg)?;

    let valid: Vec<Prompt> = parsed.iter().filter_map(|p| p.as_ref().ok().cloned()).collect();
    let mut results = guard.generate_batch(&valid).into_iter();
    let lines: Vec<GenerateLine> = parsed
        .into_iter()
        .map(|p| match p {
            Ok(prompt) => match results.next().expect("one result per valid prompt") {
                Ok(outcome) => GenerateLine::success(cfg.seed, outcome),
                Err(e) => GenerateLine::failure(cfg.seed, prompt.id, e.to_string()),
            },
            Err((id, message)) => GenerateLine::failure(cfg.seed, id, message),
        })
        .collect();

    let mut text = String::new();
    for line in &lines {
        text.push_str(&serde_json::to_string(line).map_err(forgetgen::Error::from)?);
        text.push('\n');
    }
    write_output(out, &text)?;

    let failed = lines.iter().filter(|l| l.error.is_some()).count();
    if failed > 0 {
        for line in lines.iter().filter_map(|l| l.error.as_deref()) {
            log::error!("{line}");
        }
        return Err(CliError::ItemFailures {
            failed,
            total: lines.len(),
        });
    }
    Ok(lines)
}
