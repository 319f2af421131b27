use std::path::Path;

use forgetgen::data::parse_qa_jsonl;
use forgetgen::retrieval::AnswerIndex;

use super::write_output;
use crate::backend::Backend;
use crate::config::{read_text, RunConfig};
use crate::error::CliError;

/// Embeds the forget records of `index.records` and writes the index JSON.
pub fn cmd_build_index(cfg: &RunConfig, out: Option<&Path>) -> Result<AnswerIndex, CliError> {
    let records_path = cfg
        .index
        .records
        .as_deref()
        .ok_or_else(|| CliError::Config("index.records is not set".into()))?;
    let out = out
        .or(cfg.index.path.as_deref())
        .ok_or_else(|| CliError::Usage("no output path: pass --out or set index.path".into()))?;
    let records = parse_qa_jsonl(&read_text(records_path)?, &records_path.display().to_string())?;
    let backend = Backend::open(cfg)?;
    let index = AnswerIndex::build(&records, backend.sentence_embedder(), cfg.index.key)?;
    log::info!("indexed {} forget records", index.len());
    write_output(Some(out), &index.to_json()?)?;
    Ok(index)
}
