//! Forbidden-span extraction from a retrieved forget answer.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use crate::model::{teacher_forced_logprobs, LanguageModel, TokenSequence};
use crate::text::words;
use crate::tokenizer::Tokenizer;
use crate::{Error, Result};

/// Spans that must not be generated, with their token forms.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForbiddenSet {
    spans: Vec<String>,
    token_forms: Vec<TokenSequence>,
}

impl ForbiddenSet {
    pub fn empty() -> Self {
        ForbiddenSet::default()
    }

    /// Builds a set from surface spans. Blank spans and spans that tokenize to
    /// nothing are dropped; duplicates are removed case-insensitively, keeping
    /// the first occurrence in its original case.
    pub fn from_spans<I, S>(spans: I, tok: &dyn Tokenizer) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = ForbiddenSet::default();
        let mut seen = HashSet::new();
        for span in spans {
            let span = span.as_ref().trim();
            if span.is_empty() || !seen.insert(span.to_lowercase()) {
                continue;
            }
            let tokens = tok.tokenize(span);
            if tokens.is_empty() {
                continue;
            }
            set.spans.push(span.to_string());
            set.token_forms.push(tokens);
        }
        set
    }

    pub fn spans(&self) -> &[String] {
        &self.spans
    }

    pub fn token_forms(&self) -> &[TokenSequence] {
        &self.token_forms
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

/// Union of several sets, deduplicated by surface string.
pub fn merge(sets: &[ForbiddenSet]) -> ForbiddenSet {
    let mut out = ForbiddenSet::default();
    let mut seen = HashSet::new();
    for set in sets {
        for (span, tokens) in set.spans.iter().zip(&set.token_forms) {
            if seen.insert(span.to_lowercase()) {
                out.spans.push(span.clone());
                out.token_forms.push(tokens.clone());
            }
        }
    }
    out
}

/// Backend that proposes key phrases for an answer.
pub trait KeyPhraseExtractor: Send + Sync {
    fn extract(&self, answer: &str) -> Result<Vec<String>>;
}

#[derive(Clone)]
pub enum ExtractionStrategy {
    /// Phrases from an external extractor, used verbatim.
    External(Arc<dyn KeyPhraseExtractor>),
    /// Every word of the answer.
    AllWords,
    /// The first ⌈W/2⌉ of the answer's W words.
    HalfWords,
    /// Non-stopwords whose first token the model predicts with probability
    /// strictly above `threshold` when teacher-forced over the answer.
    ConfidenceBased {
        threshold: f64,
        stopwords: HashSet<String>,
    },
}

impl ExtractionStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            ExtractionStrategy::External(_) => "external",
            ExtractionStrategy::AllWords => "all_words",
            ExtractionStrategy::HalfWords => "half_words",
            ExtractionStrategy::ConfidenceBased { .. } => "confidence_based",
        }
    }
}

impl fmt::Debug for ExtractionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtractionStrategy::ConfidenceBased { threshold, stopwords } => f
                .debug_struct("ConfidenceBased")
                .field("threshold", threshold)
                .field("stopwords", &stopwords.len())
                .finish(),
            other => f.write_str(other.name()),
        }
    }
}

/// Parses a stopword list: one word per line, blank lines ignored.
pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

/// Extracts the forbidden set for `answer` under `strategy`.
pub fn extract(
    answer: &str,
    strategy: &ExtractionStrategy,
    model: &dyn LanguageModel,
    tok: &dyn Tokenizer,
) -> Result<ForbiddenSet> {
    if answer.trim().is_empty() {
        return Err(Error::invalid("cannot extract from an empty answer"));
    }
    let all = words(answer);
    let spans: Vec<String> = match strategy {
        ExtractionStrategy::External(extractor) => extractor.extract(answer).map_err(|e| Error::Extraction {
            strategy: strategy.name().into(),
            message: e.to_string(),
        })?,
        ExtractionStrategy::AllWords => all.iter().map(|w| w.to_string()).collect(),
        ExtractionStrategy::HalfWords => {
            let keep = all.len().div_ceil(2);
            all[..keep].iter().map(|w| w.to_string()).collect()
        }
        ExtractionStrategy::ConfidenceBased { threshold, stopwords } => {
            confident_words(&all, *threshold, stopwords, model, tok)?
        }
    };
    let set = ForbiddenSet::from_spans(spans, tok);
    if set.is_empty() {
        log::warn!("{} extraction produced no forbidden spans", strategy.name());
    }
    Ok(set)
}

fn confident_words(
    all: &[&str],
    threshold: f64,
    stopwords: &HashSet<String>,
    model: &dyn LanguageModel,
    tok: &dyn Tokenizer,
) -> Result<Vec<String>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("confidence threshold {threshold} outside [0, 1]")));
    }
    let mut prefix = TokenSequence::new();
    let mut out = Vec::new();
    for word in all {
        let tokens = tok.tokenize(word);
        let Some(&first) = tokens.first() else {
            continue;
        };
        let logprob = teacher_forced_logprobs(model, &prefix, &[first])?[0];
        if logprob.exp() > threshold && !stopwords.contains(&word.to_lowercase()) {
            out.push(word.to_string());
        }
        prefix.extend(tokens);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BigramModel, TokenId, UniformModel};
    use crate::tokenizer::{Vocabulary, WhitespaceTokenizer};

    fn tok() -> WhitespaceTokenizer {
        WhitespaceTokenizer::new(Vocabulary::from_words(["a", "civil", "engineer", "he", "is", "b"]).unwrap())
    }

    fn spans(s: &ForbiddenSet) -> Vec<&str> {
        s.spans().iter().map(String::as_str).collect()
    }

    #[test]
    fn all_words_enumerates_words() {
        let t = tok();
        let m = UniformModel::new(t.vocab_size()).unwrap();
        let set = extract("a civil engineer", &ExtractionStrategy::AllWords, &m, &t).unwrap();
        assert_eq!(spans(&set), ["a", "civil", "engineer"]);
        assert_eq!(set.token_forms()[1], vec![TokenId(2)]);
    }

    #[test]
    fn half_words_takes_ceiling_prefix() {
        let t = tok();
        let m = UniformModel::new(t.vocab_size()).unwrap();
        let six = extract("w1 w2 w3 w4 w5 w6", &ExtractionStrategy::HalfWords, &m, &t).unwrap();
        assert_eq!(spans(&six), ["w1", "w2", "w3"]);
        let five = extract("w1 w2 w3 w4 w5.", &ExtractionStrategy::HalfWords, &m, &t).unwrap();
        assert_eq!(spans(&five), ["w1", "w2", "w3"]);
    }

    #[test]
    fn confidence_based_reads_teacher_forced_probabilities() {
        let t = tok();
        let id = |w: &str| t.vocabulary().id(w).unwrap();
        let v = t.vocab_size();
        let mut entries = vec![(id("civil"), id("engineer"), 0.9)];
        // The rest of the civil row spreads 0.1 over the other tokens.
        let others: Vec<u32> = (0..v as u32).filter(|&i| TokenId(i) != id("engineer")).collect();
        for &o in &others {
            entries.push((id("civil"), TokenId(o), 0.1 / others.len() as f64));
        }
        entries.push((id("a"), id("civil"), 0.1));
        entries.push((id("a"), id("b"), 0.9));
        let m = BigramModel::new(v, entries).unwrap();
        let strategy = ExtractionStrategy::ConfidenceBased {
            threshold: 0.5,
            stopwords: parse_stopwords("a\n"),
        };
        let set = extract("a civil engineer", &strategy, &m, &t).unwrap();
        assert_eq!(spans(&set), ["engineer"]);
    }

    struct Failing;

    impl KeyPhraseExtractor for Failing {
        fn extract(&self, _: &str) -> Result<Vec<String>> {
            Err(Error::Bridge("backend down".into()))
        }
    }

    struct Fixed;

    impl KeyPhraseExtractor for Fixed {
        fn extract(&self, _: &str) -> Result<Vec<String>> {
            Ok(vec!["civil engineer".into(), "Civil Engineer".into(), " ".into()])
        }
    }

    #[test]
    fn external_output_is_deduplicated_verbatim() {
        let t = tok();
        let m = UniformModel::new(t.vocab_size()).unwrap();
        let set = extract("he is a civil engineer", &ExtractionStrategy::External(Arc::new(Fixed)), &m, &t).unwrap();
        assert_eq!(spans(&set), ["civil engineer"]);
        assert_eq!(set.token_forms()[0].len(), 2);
        let err = extract("x", &ExtractionStrategy::External(Arc::new(Failing)), &m, &t).unwrap_err();
        assert!(matches!(err, Error::Extraction { ref strategy, .. } if strategy == "external"));
    }

    #[test]
    fn empty_answer_is_rejected_and_empty_result_is_legal() {
        let t = tok();
        let m = UniformModel::new(t.vocab_size()).unwrap();
        assert!(extract(" ", &ExtractionStrategy::AllWords, &m, &t).is_err());
        let set = extract("...", &ExtractionStrategy::AllWords, &m, &t).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn merge_is_union() {
        let t = tok();
        let a = ForbiddenSet::from_spans(["a"], &t);
        let ab = ForbiddenSet::from_spans(["A", "b"], &t);
        assert_eq!(merge(std::slice::from_ref(&a)), a);
        assert_eq!(spans(&merge(&[a, ab])), ["a", "b"]);
    }
}
