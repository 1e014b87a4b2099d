//! Core logic for evaluating AI-generated-image detection with
//! vision-language models: transcript construction for several guidance
//! modes, keyword verdict extraction, detection metrics with bootstrap
//! confidence intervals, partial-response confidence probing, and dataset
//! manifests.
//!
//! Everything here is deterministic and backend-free; the HTTP client, the
//! scripted mock backend, and the evaluation pipeline live in the companion
//! client crate.

pub mod extract;
pub mod interval;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod transcript;

pub use extract::{extract_verdict, ExtractionResult};
pub use interval::{
    aggregate, partial_response, segment_sentences, ConfidenceAveraging, IntervalError,
    IntervalProbe, IntervalSummary, PhraseGrouping, SentenceSpan, FRACTIONS,
};
pub use manifest::{sample_split, synth_fixture, Manifest, ManifestError, ManifestHeader, StratifyField};
pub use metrics::{
    bootstrap_macro_f1, bootstrap_relative_improvement, macro_f1, relative_improvement,
    resample_indices, BootstrapOptions, BootstrapResult, MethodRun, MetricsError, NextBestRule,
    RecallStat, ScoredPrediction,
};
pub use model::{
    ChatTranscript, ConfusionMatrix, DecodeParams, GuidanceMode, GuidanceSpec, ImageRecord,
    ModelResponse, PhraseKind, Prediction, TokenLogprob, UserPart, Verdict, REAL_GENERATOR,
};
pub use transcript::{
    build_final_answer_transcript, build_initial_transcript, build_probe_transcript,
    catalog_entries, catalog_lookup, pseudo_prefill_instruction, CatalogError,
    DETECTION_QUESTION, FINAL_ANSWER_ELICITATION, PROBE_ELICITATION,
};
