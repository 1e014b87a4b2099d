//! Shared domain types used across the harness.
//!
//! Everything here is immutable after construction and safe to share across
//! concurrent request workers.

use serde::{Deserialize, Serialize};

/// Binary classification label. `AiGenerated` is the positive class for
/// recall reporting; Macro F1 itself is symmetric in the two classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Real,
    AiGenerated,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Real => "real",
            Verdict::AiGenerated => "ai_generated",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reserved generator name for authentic images.
pub const REAL_GENERATOR: &str = "real";

/// One labeled image with generator and dataset provenance.
///
/// `image_ref` is opaque to every module except the backend client: a record
/// with an unreadable image fails at request time, not load time, so
/// manifests may reference remote assets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub image_ref: String,
    #[serde(rename = "label")]
    pub true_label: Verdict,
    /// `"real"` for authentic images, otherwise the generator name
    /// (e.g. `"sdxl"`, `"glide"`, `"midjourney"`).
    pub generator: String,
    pub dataset: String,
    pub split: String,
}

impl ImageRecord {
    /// Checks the label/generator invariant: `true_label == Real` iff
    /// `generator == "real"`.
    pub fn label_matches_generator(&self) -> bool {
        (self.true_label == Verdict::Real) == (self.generator == REAL_GENERATOR)
    }
}

/// How the steering phrase is delivered to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    /// Plain question, no steering phrase.
    Baseline,
    /// Phrase inserted into the assistant field, which the model continues.
    Prefill,
    /// System-field instruction asking the model to begin with the phrase.
    PseudoPrefill,
    /// Phrase appended to the user question.
    Prompt,
}

impl GuidanceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GuidanceMode::Baseline => "baseline",
            GuidanceMode::Prefill => "prefill",
            GuidanceMode::PseudoPrefill => "pseudo-prefill",
            GuidanceMode::Prompt => "prompt",
        }
    }
}

impl std::fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Family of the steering phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhraseKind {
    /// No phrase (baseline only).
    None,
    /// Chain-of-thought phrase.
    Cot,
    /// Task-aligned style/artifacts phrase.
    S2,
    /// Alternative phrasing from the variant table or a user-supplied phrase.
    Variant,
}

/// A guidance mode paired with a concrete steering phrase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceSpec {
    pub mode: GuidanceMode,
    pub phrase_kind: PhraseKind,
    /// Short identifier for the phrase (e.g. `"s2"`, `"cot"`, `"flaws"`,
    /// `"custom"`); empty for baseline. Used to build [`Self::method_id`].
    pub phrase_id: String,
    /// Canonical phrase text; empty iff `mode == Baseline`.
    pub phrase_text: String,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GuidanceError {
    #[error("baseline guidance must not carry a phrase")]
    BaselineWithPhrase,
    #[error("guidance mode {0} requires a non-empty phrase")]
    MissingPhrase(GuidanceMode),
}

impl GuidanceSpec {
    pub fn baseline() -> Self {
        GuidanceSpec {
            mode: GuidanceMode::Baseline,
            phrase_kind: PhraseKind::None,
            phrase_id: String::new(),
            phrase_text: String::new(),
        }
    }

    /// Builds a non-baseline guidance spec, enforcing the mode/phrase
    /// invariants.
    pub fn new(
        mode: GuidanceMode,
        phrase_kind: PhraseKind,
        phrase_id: impl Into<String>,
        phrase_text: impl Into<String>,
    ) -> Result<Self, GuidanceError> {
        let phrase_id = phrase_id.into();
        let phrase_text = phrase_text.into();
        if mode == GuidanceMode::Baseline {
            if phrase_kind != PhraseKind::None || !phrase_text.is_empty() {
                return Err(GuidanceError::BaselineWithPhrase);
            }
        } else if phrase_text.is_empty() || phrase_kind == PhraseKind::None {
            return Err(GuidanceError::MissingPhrase(mode));
        }
        Ok(GuidanceSpec { mode, phrase_kind, phrase_id, phrase_text })
    }

    /// Stable identifier for result files and tables, e.g. `"prefill:s2"`
    /// or `"baseline"`.
    pub fn method_id(&self) -> String {
        if self.mode == GuidanceMode::Baseline {
            "baseline".to_string()
        } else {
            format!("{}:{}", self.mode, self.phrase_id)
        }
    }

    /// Text inserted into the assistant field, present only for prefill mode.
    pub fn assistant_prefill(&self) -> Option<&str> {
        if self.mode == GuidanceMode::Prefill {
            Some(&self.phrase_text)
        } else {
            None
        }
    }
}

/// Decoding parameters forwarded to the backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: i64,
    pub want_logprobs: bool,
}

impl DecodeParams {
    /// Main-run defaults: deterministic decoding, 512-token cap, no logprobs.
    pub fn main_run() -> Self {
        DecodeParams { temperature: 0.0, max_tokens: 512, seed: 0, want_logprobs: false }
    }

    /// Short confidence-probe completions: 20-token cap with logprobs.
    pub fn probe() -> Self {
        DecodeParams { temperature: 0.0, max_tokens: 20, seed: 0, want_logprobs: true }
    }
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self::main_run()
    }
}

/// One ordered part of the user field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UserPart {
    Image { image_ref: String },
    Text { text: String },
}

/// Ordered system/user/assistant fields sent to the backend.
///
/// `assistant_prefill` is content the assistant field starts with; the
/// backend continues generation from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTranscript {
    pub system: Option<String>,
    pub user: Vec<UserPart>,
    pub assistant_prefill: Option<String>,
}

impl ChatTranscript {
    /// Concatenated text parts of the user field.
    pub fn user_text(&self) -> String {
        self.user
            .iter()
            .filter_map(|p| match p {
                UserPart::Text { text } => Some(text.as_str()),
                UserPart::Image { .. } => None,
            })
            .collect()
    }
}

/// One generated token with its log probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

/// Completion text plus per-token log probabilities and metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    /// Empty unless logprobs were requested. Concatenation of the token
    /// texts equals `text` under the backend's detokenization convention,
    /// recorded verbatim.
    pub tokens: Vec<TokenLogprob>,
    pub finish_reason: String,
    pub model_id: String,
}

impl ModelResponse {
    /// Arithmetic mean of the completion token log probabilities;
    /// 0.0 when no tokens were returned.
    pub fn mean_logprob(&self) -> f64 {
        if self.tokens.is_empty() {
            0.0
        } else {
            self.tokens.iter().map(|t| t.logprob).sum::<f64>() / self.tokens.len() as f64
        }
    }
}

/// Extracted verdict for one record, with the raw texts kept for audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub record_id: String,
    pub verdict: Verdict,
    /// True when neither keyword class matched; such predictions default to
    /// `Real` and are reported separately as the unparsed rate.
    pub unparsed: bool,
    /// First-stage response with the prefill (when any) re-prepended.
    pub raw_first_response: String,
    /// Second-stage completion the verdict was extracted from.
    pub raw_final_answer: String,
}

/// 2x2 counts over {real, ai_generated} with `ai_generated` as the positive
/// class. All detection metrics derive from this.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionMatrix { tp, fp, tn, fn_ }
    }

    /// Number of scored predictions.
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Tallies one prediction against its true label.
    pub fn record(&mut self, true_label: Verdict, predicted: Verdict) {
        match (true_label, predicted) {
            (Verdict::AiGenerated, Verdict::AiGenerated) => self.tp += 1,
            (Verdict::AiGenerated, Verdict::Real) => self.fn_ += 1,
            (Verdict::Real, Verdict::AiGenerated) => self.fp += 1,
            (Verdict::Real, Verdict::Real) => self.tn += 1,
        }
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = ConfusionMatrix;
    fn add(self, rhs: ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tp + rhs.tp,
            fp: self.fp + rhs.fp,
            tn: self.tn + rhs.tn,
            fn_: self.fn_ + rhs.fn_,
        }
    }
}

impl std::ops::AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, rhs: ConfusionMatrix) {
        *self = *self + rhs;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_roundtrips_through_serde() {
        for v in [Verdict::Real, Verdict::AiGenerated] {
            let s = serde_json::to_string(&v).unwrap();
            let back: Verdict = serde_json::from_str(&s).unwrap();
            assert_eq!(v, back);
        }
        assert_eq!(serde_json::to_string(&Verdict::AiGenerated).unwrap(), "\"ai_generated\"");
    }

    #[test]
    fn guidance_mode_and_phrase_kind_roundtrip() {
        for m in [
            GuidanceMode::Baseline,
            GuidanceMode::Prefill,
            GuidanceMode::PseudoPrefill,
            GuidanceMode::Prompt,
        ] {
            let s = serde_json::to_string(&m).unwrap();
            assert_eq!(m, serde_json::from_str(&s).unwrap());
        }
        for k in [PhraseKind::None, PhraseKind::Cot, PhraseKind::S2, PhraseKind::Variant] {
            let s = serde_json::to_string(&k).unwrap();
            assert_eq!(k, serde_json::from_str::<PhraseKind>(&s).unwrap());
        }
    }

    #[test]
    fn guidance_invariants_enforced() {
        assert!(GuidanceSpec::new(GuidanceMode::Prefill, PhraseKind::S2, "s2", "").is_err());
        assert!(GuidanceSpec::new(GuidanceMode::Prefill, PhraseKind::None, "x", "text").is_err());
        let g = GuidanceSpec::new(GuidanceMode::Prefill, PhraseKind::S2, "s2", "some phrase")
            .unwrap();
        assert_eq!(g.method_id(), "prefill:s2");
        assert_eq!(GuidanceSpec::baseline().method_id(), "baseline");
    }

    #[test]
    fn confusion_total_and_record() {
        let mut cm = ConfusionMatrix::default();
        cm.record(Verdict::AiGenerated, Verdict::AiGenerated);
        cm.record(Verdict::AiGenerated, Verdict::Real);
        cm.record(Verdict::Real, Verdict::AiGenerated);
        cm.record(Verdict::Real, Verdict::Real);
        assert_eq!(cm, ConfusionMatrix::new(1, 1, 1, 1));
        assert_eq!(cm.total(), 4);
    }

    #[test]
    fn label_generator_invariant() {
        let rec = ImageRecord {
            id: "a".into(),
            image_ref: "x.png".into(),
            true_label: Verdict::Real,
            generator: "real".into(),
            dataset: "d3".into(),
            split: "main".into(),
        };
        assert!(rec.label_matches_generator());
        let mut bad = rec.clone();
        bad.generator = "glide".into();
        assert!(!bad.label_matches_generator());
    }
}
