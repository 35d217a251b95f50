//! Caption tokenization shared by vocabulary building and evaluation.

/// Lowercases, splits on whitespace and strips punctuation from both ends
/// of every token. Tokens that are pure punctuation disappear.
pub fn tokenize(raw: &str) -> Vec<String> {
    raw.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}
