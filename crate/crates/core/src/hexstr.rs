//! Canonical hex text: lowercase, no separators, even length.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HexError {
    #[error("odd-length hex string ({0} chars)")]
    OddLength(usize),
    #[error("invalid hex character {0:?}")]
    InvalidChar(char),
}

/// Parses hex text, tolerating uppercase and ASCII whitespace.
pub fn decode(text: &str) -> Result<Vec<u8>, HexError> {
    let cleaned: String = text.chars().filter(|c| !c.is_ascii_whitespace()).collect();
    if let Some(bad) = cleaned.chars().find(|c| !c.is_ascii_hexdigit()) {
        return Err(HexError::InvalidChar(bad));
    }
    if cleaned.len() % 2 != 0 {
        return Err(HexError::OddLength(cleaned.len()));
    }
    Ok(hex::decode(cleaned).expect("validated hex"))
}

pub fn encode(bytes: &[u8]) -> String {
    hex::encode(bytes)
}

/// Round-trips `text` through bytes so that equal payloads compare equal as strings.
pub fn canonical(text: &str) -> Result<String, HexError> {
    decode(text).map(|b| encode(&b))
}
