//! Tokenizer shared by the metadata store, the stub embedder and the stub
//! context scorer.

use unicode_normalization::UnicodeNormalization;

/// NFC-normalizes, lowercases and splits on any non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect::<String>().to_lowercase();
    normalized
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        // Lowercasing can decompose some characters; recompose per token.
        .map(|t| t.nfc().collect())
        .collect()
}
