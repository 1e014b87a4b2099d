//! Transcript construction for each guidance mode and the two-stage answer
//! elicitation.
//!
//! All builders are pure: identical inputs yield byte-identical transcripts,
//! which keeps the response cache stable across runs.

use crate::model::{ChatTranscript, GuidanceMode, GuidanceSpec, ImageRecord, UserPart};

/// The detection question placed in the user field after the image.
pub const DETECTION_QUESTION: &str = "Is this image real or AI-generated?";

/// Second-stage phrase appended after the first response to force a clean
/// label.
pub const FINAL_ANSWER_ELICITATION: &str = "Final Answer(real/ai-generated):";

/// Elicitation phrase used by the partial-response confidence probes. Kept
/// distinct from [`FINAL_ANSWER_ELICITATION`]; the two differ verbatim.
pub const PROBE_ELICITATION: &str = "Final Answer(real/ai-generated): This image is";

/// Separator between the first response and the elicitation phrase. Any
/// fixed separator works, but it must stay constant for cache stability.
const ELICITATION_SEPARATOR: &str = "\n";

/// Built-in phrase catalog, keyed by `(kind, variant_id)`, byte-exact.
///
/// Prompt-mode phrases are stored as distinct entries rather than derived
/// from the prefill phrases: the prompt rendering of the style/artifacts
/// phrase omits one "the".
const CATALOG: &[(&str, &str, &str)] = &[
    ("cot", "default", "Let's think step by step"),
    ("s2", "default", "Let's examine the style and the synthesis artifacts"),
    ("variant", "observe", "Let's observe the style and the synthesis artifacts"),
    ("variant", "artifacts-only", "Let's examine the synthesis artifacts"),
    ("variant", "style-only", "Let's examine the style"),
    ("variant", "details", "Let's examine the details"),
    ("variant", "flaws", "Let's examine the flaws"),
    ("prompt", "cot", "Please think step by step."),
    ("prompt", "s2", "Please examine the style and synthesis artifacts."),
];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CatalogError {
    #[error("unknown phrase catalog entry {kind}/{variant_id}")]
    UnknownVariant { kind: String, variant_id: String },
}

/// Looks up a canonical phrase by catalog key, e.g. `("cot", "default")` or
/// `("variant", "flaws")`.
pub fn catalog_lookup(kind: &str, variant_id: &str) -> Result<&'static str, CatalogError> {
    CATALOG
        .iter()
        .find(|(k, v, _)| *k == kind && *v == variant_id)
        .map(|(_, _, text)| *text)
        .ok_or_else(|| CatalogError::UnknownVariant {
            kind: kind.to_string(),
            variant_id: variant_id.to_string(),
        })
}

/// All catalog keys, in table order. Used by the CLI to list phrases.
pub fn catalog_entries() -> impl Iterator<Item = (&'static str, &'static str, &'static str)> {
    CATALOG.iter().copied()
}

/// System instruction used by pseudo-prefill mode.
pub fn pseudo_prefill_instruction(phrase: &str) -> String {
    format!("Please start your responses with \"{phrase}\"")
}

/// Builds the first-stage transcript for one record under the given
/// guidance mode.
///
/// The user field always carries the image followed by the detection
/// question; the steering phrase is delivered through the assistant field
/// (prefill), the system field (pseudo-prefill), or appended to the question
/// (prompt).
pub fn build_initial_transcript(record: &ImageRecord, guidance: &GuidanceSpec) -> ChatTranscript {
    let image = UserPart::Image { image_ref: record.image_ref.clone() };
    match guidance.mode {
        GuidanceMode::Baseline => ChatTranscript {
            system: None,
            user: vec![image, UserPart::Text { text: DETECTION_QUESTION.to_string() }],
            assistant_prefill: None,
        },
        GuidanceMode::Prefill => ChatTranscript {
            system: None,
            user: vec![image, UserPart::Text { text: DETECTION_QUESTION.to_string() }],
            assistant_prefill: Some(guidance.phrase_text.clone()),
        },
        GuidanceMode::PseudoPrefill => ChatTranscript {
            system: Some(pseudo_prefill_instruction(&guidance.phrase_text)),
            user: vec![image, UserPart::Text { text: DETECTION_QUESTION.to_string() }],
            assistant_prefill: None,
        },
        GuidanceMode::Prompt => ChatTranscript {
            system: None,
            user: vec![
                image,
                UserPart::Text {
                    text: format!("{} {}", DETECTION_QUESTION, guidance.phrase_text),
                },
            ],
            assistant_prefill: None,
        },
    }
}

/// Builds the second-stage transcript that elicits the clean label.
///
/// `first_response_text` is the backend's raw completion for `initial`
/// (without the prefill). The returned transcript equals `initial` with the
/// assistant field replaced by
/// `prefill + first_response + "\n" + "Final Answer(real/ai-generated):"`,
/// so for prefill mode the stored response always starts with the phrase.
pub fn build_final_answer_transcript(
    initial: &ChatTranscript,
    first_response_text: &str,
) -> ChatTranscript {
    let prefill = initial.assistant_prefill.as_deref().unwrap_or("");
    ChatTranscript {
        system: initial.system.clone(),
        user: initial.user.clone(),
        assistant_prefill: Some(format!(
            "{prefill}{first_response_text}{ELICITATION_SEPARATOR}{FINAL_ANSWER_ELICITATION}"
        )),
    }
}

/// Builds a confidence-probe transcript from a partial response.
///
/// `partial` already includes the prefill when the guidance mode is prefill
/// (see `interval::partial_response`), so the assistant field is replaced
/// wholesale. An empty partial (e.g. baseline at the 0% interval) yields the
/// bare elicitation phrase.
pub fn build_probe_transcript(initial: &ChatTranscript, partial: &str) -> ChatTranscript {
    let assistant = if partial.is_empty() {
        PROBE_ELICITATION.to_string()
    } else {
        format!("{partial}{ELICITATION_SEPARATOR}{PROBE_ELICITATION}")
    };
    ChatTranscript {
        system: initial.system.clone(),
        user: initial.user.clone(),
        assistant_prefill: Some(assistant),
    }
}
