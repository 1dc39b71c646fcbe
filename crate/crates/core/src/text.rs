//! Text normalization, span search and digests shared across the pipeline.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

/// NFC-normalizes, collapses internal whitespace runs to one space and trims.
pub fn normalize(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// [`normalize`] followed by lowercasing. Used for equality comparisons.
pub fn fold(text: &str) -> String {
    normalize(text).to_lowercase()
}

/// Hex SHA-256 of the NFC form of `text`.
pub fn digest(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    hex_digest(nfc.as_bytes())
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let out = Sha256::digest(bytes);
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Half-open range of character (not byte) offsets into a turn's text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    /// Slices `text` by character offsets. Returns `None` when out of range.
    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        let mut indices = text.char_indices().map(|(i, _)| i).chain(Some(text.len()));
        let start = indices.nth(self.start)?;
        let end = if self.end == self.start {
            start
        } else {
            indices.nth(self.end - self.start - 1)?
        };
        text.get(start..end)
    }
}

/// Finds `needle` inside `haystack`, comparing normalized, case-folded text.
///
/// `haystack` is expected to be already normalized (turn text is normalized
/// at ingest); the returned span indexes its characters.
pub fn find_span(haystack: &str, needle: &str) -> Option<CharSpan> {
    let needle = fold(needle);
    if needle.is_empty() {
        return None;
    }
    // folded text plus, for every folded char, the source char index
    let mut folded = String::with_capacity(haystack.len());
    let mut origin = Vec::with_capacity(haystack.len());
    for (idx, ch) in haystack.chars().enumerate() {
        for lower in ch.to_lowercase() {
            folded.push(lower);
            origin.push(idx);
        }
    }
    let byte_pos = folded.find(&needle)?;
    let start_char = folded[..byte_pos].chars().count();
    let end_char = start_char + needle.chars().count();
    let start = origin[start_char];
    let end = origin[end_char - 1] + 1;
    Some(CharSpan { start, end })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_collapses_and_trims() {
        assert_eq!(normalize("  a \t b\n\nc  "), "a b c");
        // decomposed e + combining acute composes to a single char
        assert_eq!(normalize("cafe\u{301}"), "caf\u{e9}");
    }

    #[test]
    fn digest_is_nfc_stable() {
        assert_eq!(digest("caf\u{e9}"), digest("cafe\u{301}"));
        assert_ne!(digest("a"), digest("b"));
        assert_eq!(digest("abc").len(), 64);
    }

    #[test]
    fn span_search_is_case_insensitive() {
        let text = "I think Pricing is confusing for teams";
        let span = find_span(text, "pricing  IS confusing").unwrap();
        assert_eq!(span.slice(text), Some("Pricing is confusing"));
        assert_eq!(find_span(text, "not there"), None);
        assert_eq!(find_span(text, "   "), None);
    }

    #[test]
    fn span_offsets_are_characters() {
        let text = "Ünïcode — déjà vu here";
        let span = find_span(text, "déjà vu").unwrap();
        assert_eq!(span, CharSpan { start: 10, end: 17 });
        assert_eq!(span.slice(text), Some("déjà vu"));
    }
}
