//! Word-level vocabulary and the whitespace tokenizer used by the toy backend.

use std::collections::HashMap;
use std::path::Path;

use crate::model::{TokenId, TokenSequence};
use crate::{Error, Result};

/// Surface form of the reserved unknown-word token, always id 0.
pub const UNK_TOKEN: &str = "<unk>";
pub const UNK_ID: TokenId = TokenId(0);

/// Ordered word list; a word's position is its id. Id 0 is always [`UNK_TOKEN`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from `words`, prepending [`UNK_TOKEN`] unless the
    /// list already starts with it. Words are lowercased.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut list: Vec<String> = words.into_iter().map(|w| w.as_ref().to_lowercase()).collect();
        if list.first().map(String::as_str) != Some(UNK_TOKEN) {
            list.insert(0, UNK_TOKEN.to_string());
        }
        let mut vocab = Vocabulary {
            words: Vec::with_capacity(list.len()),
            index: HashMap::with_capacity(list.len()),
        };
        for word in list {
            vocab.push(word).map_err(Error::InvalidInput)?;
        }
        Ok(vocab)
    }

    /// Parses the one-token-per-line format. Line number (from 0) is the id and
    /// the first line must be [`UNK_TOKEN`].
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut vocab = Vocabulary {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for (lineno, raw) in text.lines().enumerate() {
            let word = raw.trim_end_matches('\r');
            if lineno == 0 && word != UNK_TOKEN {
                return Err(Error::parse(
                    source_name,
                    1,
                    format!("first entry must be {UNK_TOKEN}, found {word:?}"),
                ));
            }
            vocab
                .push(word.to_lowercase())
                .map_err(|m| Error::parse(source_name, lineno + 1, m))?;
        }
        if vocab.words.is_empty() {
            return Err(Error::parse(source_name, 0, "empty vocabulary"));
        }
        Ok(vocab)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    fn push(&mut self, word: String) -> std::result::Result<(), String> {
        if word.is_empty() {
            return Err("empty token".into());
        }
        if word.chars().any(char::is_whitespace) {
            return Err(format!("token {word:?} contains whitespace"));
        }
        if self.words.len() >= u32::MAX as usize {
            return Err("vocabulary too large".into());
        }
        let id = TokenId(self.words.len() as u32);
        if self.index.insert(word.clone(), id).is_some() {
            return Err(format!("duplicate token {word:?}"));
        }
        self.words.push(word);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id.index()).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Serializes back into the line format accepted by [`Vocabulary::parse`].
    pub fn to_file_string(&self) -> String {
        let mut out = self.words.join("\n");
        out.push('\n');
        out
    }
}

pub trait Tokenizer: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn tokenize(&self, text: &str) -> TokenSequence;

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String>;

    /// Whether the last token of `tokens` ends a whitespace-delimited word.
    /// Word-level tokenizers always do; subword tokenizers override this.
    fn completes_word(&self, _tokens: &[TokenId]) -> bool {
        true
    }
}

/// Lowercasing whitespace tokenizer. Unknown words map to [`UNK_ID`].
#[derive(Debug, Clone)]
pub struct WhitespaceTokenizer {
    vocab: Vocabulary,
}

impl WhitespaceTokenizer {
    pub fn new(vocab: Vocabulary) -> Self {
        WhitespaceTokenizer { vocab }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }
}

impl Tokenizer for WhitespaceTokenizer {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn tokenize(&self, text: &str) -> TokenSequence {
        text.split_whitespace()
            .map(|w| self.vocab.id(&w.to_lowercase()).unwrap_or(UNK_ID))
            .collect()
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        let words = tokens
            .iter()
            .map(|&t| {
                self.vocab
                    .word(t)
                    .ok_or_else(|| Error::invalid(format!("token id {} outside vocabulary of {}", t.0, self.vocab.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn the_cat() -> WhitespaceTokenizer {
        WhitespaceTokenizer::new(Vocabulary::from_words(["the", "cat"]).unwrap())
    }

    #[test]
    fn empty_text_is_empty_sequence() {
        assert!(the_cat().tokenize("").is_empty());
        assert_eq!(the_cat().detokenize(&[]).unwrap(), "");
    }

    #[test]
    fn known_words_are_looked_up_after_unk() {
        let tok = the_cat();
        // <unk> occupies id 0, so the user words start at 1.
        assert_eq!(tok.tokenize("the cat"), vec![TokenId(1), TokenId(2)]);
        assert_eq!(tok.tokenize("The  CAT"), vec![TokenId(1), TokenId(2)]);
        assert_eq!(tok.detokenize(&[TokenId(1), TokenId(2)]).unwrap(), "the cat");
    }

    #[test]
    fn unknown_word_maps_to_unk() {
        let tok = the_cat();
        assert_eq!(tok.tokenize("the dog"), vec![TokenId(1), UNK_ID]);
        assert_eq!(tok.vocabulary().word(UNK_ID), Some(UNK_TOKEN));
    }

    #[test]
    fn detokenize_rejects_out_of_range_ids() {
        assert!(matches!(the_cat().detokenize(&[TokenId(3)]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn parse_requires_unk_first_and_unique_tokens() {
        assert!(Vocabulary::parse("<unk>\nthe\ncat\n", "v").is_ok());
        assert!(matches!(Vocabulary::parse("the\ncat\n", "v"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Vocabulary::parse("<unk>\nthe\nThe\n", "v"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(Vocabulary::parse("<unk>\n\ncat\n", "v"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(Vocabulary::parse("<unk>\na b\n", "v"), Err(Error::Parse { line: 2, .. })));
        assert!(Vocabulary::parse("", "v").is_err());
    }

    #[test]
    fn file_format_round_trips() {
        let v = Vocabulary::from_words(["the", "cat", "</s>"]).unwrap();
        assert_eq!(Vocabulary::parse(&v.to_file_string(), "v").unwrap(), v);
    }

    proptest! {
        #[test]
        fn tokenize_is_left_inverse_of_detokenize(ids in proptest::collection::vec(0u32..6, 0..20)) {
            let tok = WhitespaceTokenizer::new(
                Vocabulary::from_words(["the", "cat", "sat", "on", "mat"]).unwrap(),
            );
            let seq: Vec<TokenId> = ids.into_iter().map(TokenId).collect();
            let text = tok.detokenize(&seq).unwrap();
            prop_assert_eq!(tok.tokenize(&text), seq);
        }

        #[test]
        fn detokenize_reproduces_text_up_to_whitespace(words in proptest::collection::vec(prop::sample::select(vec!["the", "cat", "sat"]), 0..10), sep in "[ \t\n]{1,3}") {
            let tok = WhitespaceTokenizer::new(Vocabulary::from_words(["the", "cat", "sat"]).unwrap());
            let text = words.join(&sep);
            let back = tok.detokenize(&tok.tokenize(&text)).unwrap();
            prop_assert_eq!(back, crate::text::normalize_whitespace(&text));
        }
    }
}
