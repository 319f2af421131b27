//! Word-level text helpers shared by extraction, matching and metrics.

/// Strips leading and trailing punctuation from a whitespace-delimited word.
pub fn strip_punctuation(word: &str) -> &str {
    word.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Splits on whitespace, strips punctuation at word edges and drops words that
/// were punctuation only. Case is preserved.
pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace()
        .map(strip_punctuation)
        .filter(|w| !w.is_empty())
        .collect()
}

/// Lowercased [`words`], the normalization used by the lexical metrics.
pub fn normalized_words(text: &str) -> Vec<String> {
    words(text).into_iter().map(str::to_lowercase).collect()
}

/// Final word of `text`, punctuation stripped. Empty when there is none.
pub fn last_word(text: &str) -> &str {
    text.split_whitespace()
        .rev()
        .map(strip_punctuation)
        .find(|w| !w.is_empty())
        .unwrap_or("")
}

/// Whitespace-normalized form: single spaces, no leading or trailing space.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
