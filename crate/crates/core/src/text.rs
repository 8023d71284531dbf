//! Text normalization and tokenization shared by every text-consuming module.

use alloc::string::String;
use alloc::vec::Vec;

use unicode_normalization::UnicodeNormalization;

/// NFC-normalizes, trims, and collapses internal whitespace runs to a single
/// space.
pub fn normalize_text(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    let mut out = String::with_capacity(nfc.len());
    for word in nfc.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Lowercases and splits on every run of non-alphanumeric characters,
/// dropping tokens shorter than two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|tok| tok.chars().nth(1).is_some())
        .map(|tok| tok.to_lowercase())
        .collect()
}

/// Whitespace-delimited word count; the fallback token counter for prompt
/// budgets.
pub fn unit_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}
