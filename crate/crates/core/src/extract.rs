//! Keyword-based verdict extraction from final-answer completions.
//!
//! Matching is case-insensitive and token-bounded: a keyword counts only when
//! it is not embedded inside a longer alphanumeric run, so "artificially"
//! does not match "artificial" and "surreal" does not match "real".

use crate::model::Verdict;

/// Keywords whose presence votes for the AI-generated class.
const AI_KEYWORDS: &[&str] = &["ai-generated", "artificial", "fake", "generated"];

/// Keyword whose presence votes for the real class.
const REAL_KEYWORD: &str = "real";

/// Outcome of scanning one final-answer completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ExtractionResult {
    pub verdict: Verdict,
    /// True when no keyword from either class matched and the verdict fell
    /// back to the default class.
    pub unparsed: bool,
}

/// Scans `text` for class keywords and resolves them to a verdict.
///
/// Resolution order: if a real-class keyword is present the verdict is Real
/// (even when AI-class keywords also match — hedged answers usually end on
/// the stated conclusion); if only AI-class keywords match the verdict is
/// AiGenerated; if nothing matches the verdict defaults to Real with
/// `unparsed` set so callers can report the miss rate.
pub fn extract_verdict(text: &str) -> ExtractionResult {
    let lowered = text.to_lowercase();
    let has_real = contains_bounded(&lowered, REAL_KEYWORD);
    let has_ai = AI_KEYWORDS.iter().any(|kw| contains_bounded(&lowered, kw));
    match (has_real, has_ai) {
        (true, _) => ExtractionResult { verdict: Verdict::Real, unparsed: false },
        (false, true) => ExtractionResult { verdict: Verdict::AiGenerated, unparsed: false },
        (false, false) => ExtractionResult { verdict: Verdict::Real, unparsed: true },
    }
}

/// Returns true when `needle` occurs in `haystack` delimited on both sides
/// by a non-alphanumeric character or the string edge.
///
/// Both arguments are expected to be lowercase already. The boundary test is
/// on characters, not bytes, so multi-byte punctuation (e.g. a non-breaking
/// hyphen) is a valid delimiter.
fn contains_bounded(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let left_ok = haystack[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let right_ok = haystack[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if left_ok && right_ok {
            return true;
        }
        // advance one character, not one byte, to stay on a boundary
        let step = haystack[start..].chars().next().map_or(1, char::len_utf8);
        from = start + step;
    }
    false
}
