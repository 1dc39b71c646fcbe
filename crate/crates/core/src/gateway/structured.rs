use serde_json::{Map, Value};
use thiserror::Error;

/// One object from a model's structured list output, restricted to the
/// caller's expected keys.
pub type StructuredRecord = Map<String, Value>;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("could not parse a structured list: {reason}")]
pub struct RepairFailure {
    pub reason: String,
    /// The raw response, kept for audit.
    pub text: String,
}

/// Parses a JSON list of records out of model output.
///
/// Tries the text as-is, then with code fences removed, then the slice from
/// the first `[` to the last `]` (or `{` to `}`). A bare object is treated as
/// a one-record list and `{}` as the empty list. Only `expected_keys` are
/// kept in each record.
pub fn extract_structured_list(
    text: &str,
    expected_keys: &[&str],
) -> Result<Vec<StructuredRecord>, RepairFailure> {
    let fail = |reason: &str| RepairFailure {
        reason: reason.to_string(),
        text: text.to_string(),
    };
    let value = parse_candidates(text).ok_or_else(|| fail("no parsable JSON list or object"))?;
    let items = match value {
        Value::Array(items) => items,
        Value::Object(map) if map.is_empty() => Vec::new(),
        obj @ Value::Object(_) => vec![obj],
        _ => return Err(fail("top-level value is neither a list nor an object")),
    };
    items
        .into_iter()
        .map(|item| match item {
            Value::Object(map) => Ok(map
                .into_iter()
                .filter(|(k, _)| expected_keys.contains(&k.as_str()))
                .collect()),
            _ => Err(fail("list element is not an object")),
        })
        .collect()
}

fn parse_candidates(text: &str) -> Option<Value> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str(trimmed) {
        return Some(v);
    }
    let unfenced = strip_fences(trimmed);
    if let Ok(v) = serde_json::from_str(unfenced.trim()) {
        return Some(v);
    }
    outer_slice(&unfenced, '[', ']')
        .and_then(|s| serde_json::from_str(s).ok())
        .or_else(|| outer_slice(&unfenced, '{', '}').and_then(|s| serde_json::from_str(s).ok()))
}

/// Drops lines that open or close a markdown code fence.
fn strip_fences(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn outer_slice(text: &str, open: char, close: char) -> Option<&str> {
    let start = text.find(open)?;
    let end = text.rfind(close)?;
    (end > start).then(|| &text[start..=end])
}
