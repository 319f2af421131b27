//! Prompts, question–answer records and JSONL ingestion.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(rename = "prompt")]
    pub text: String,
}

impl Prompt {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        Self::with_id(None, text)
    }

    pub fn with_id(id: Option<String>, text: impl Into<String>) -> Result<Self> {
        let prompt = Prompt { id, text: text.into() };
        prompt.validate()?;
        Ok(prompt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::invalid("prompt text is empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Forget,
    Retain,
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    pub split: Split,
}

impl QaPair {
    pub fn new(question: impl Into<String>, answer: impl Into<String>, split: Split) -> Result<Self> {
        let pair = QaPair {
            question: question.into(),
            answer: answer.into(),
            split,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        if self.question.trim().is_empty() {
            return Err(Error::invalid("question is empty"));
        }
        if self.answer.trim().is_empty() {
            return Err(Error::invalid("answer is empty"));
        }
        Ok(())
    }
}

/// Parses one JSON value per non-blank line. Errors carry the 1-based line.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, source_name: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(line).map_err(|e| Error::parse(source_name, lineno + 1, e.to_string()))?;
        out.push(value);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    parse_jsonl(&text, &path.display().to_string())
}

/// Parses a question–answer JSONL file and validates every record.
pub fn parse_qa_jsonl(text: &str, source_name: &str) -> Result<Vec<QaPair>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |m: String| Error::parse(source_name, lineno + 1, m);
        let pair: QaPair = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
        pair.validate().map_err(|e| at(e.to_string()))?;
        out.push(pair);
    }
    Ok(out)
}

/// Parses a prompt JSONL file (`id`, `prompt`) and validates every record.
pub fn parse_prompt_jsonl(text: &str, source_name: &str) -> Result<Vec<Prompt>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |m: String| Error::parse(source_name, lineno + 1, m);
        let prompt: Prompt = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
        prompt.validate().map_err(|e| at(e.to_string()))?;
        out.push(prompt);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_must_have_text() {
        assert!(Prompt::new("  \n").is_err());
        assert!(Prompt::new("who?").is_ok());
    }

    #[test]
    fn qa_jsonl_reports_bad_lines() {
        let ok = r#"{"question":"q","answer":"a","split":"forget"}"#;
        let rows = parse_qa_jsonl(&format!("{ok}\n\n{ok}\n"), "f").unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].split, Split::Forget);

        let bad_split = r#"{"question":"q","answer":"a","split":"other"}"#;
        assert!(matches!(parse_qa_jsonl(&format!("{ok}\n{bad_split}\n"), "f"), Err(Error::Parse { line: 2, .. })));
        let empty_answer = r#"{"question":"q","answer":" ","split":"retain"}"#;
        assert!(matches!(parse_qa_jsonl(empty_answer, "f"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn prompt_jsonl_uses_prompt_field() {
        let rows = parse_prompt_jsonl("{\"id\":\"p1\",\"prompt\":\"hello\"}\n", "p").unwrap();
        assert_eq!(rows[0].id.as_deref(), Some("p1"));
        assert_eq!(rows[0].text, "hello");
    }
}
