//! Record-parallel evaluation flows: the two-stage main run (free-form
//! response, then forced final answer) and the partial-response confidence
//! probe sweep.
//!
//! Workers run under rayon; per-record results are collected in manifest
//! order regardless of completion order, and one record's failure never
//! aborts the rest of the run.

use rayon::prelude::*;

use aidet_core::{
    build_final_answer_transcript, build_initial_transcript, build_probe_transcript,
    extract_verdict, partial_response, segment_sentences, DecodeParams, GuidanceSpec, ImageRecord,
    IntervalProbe, Prediction, FRACTIONS,
};

use crate::client::Client;

/// One record the backend could not score, with enough context to retry.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RecordFailure {
    pub record_id: String,
    pub method_id: String,
    /// Probe fraction the failure occurred at; `None` for main-run stages.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    pub message: String,
    /// Digest of the failing request when one was built.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
}

/// Predictions and failures of one method over one manifest, in manifest
/// order.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub method_id: String,
    pub predictions: Vec<Prediction>,
    pub failures: Vec<RecordFailure>,
}

/// Probe results of one method over one manifest.
#[derive(Debug, Clone)]
pub struct ProbeOutput {
    pub method_id: String,
    pub probes: Vec<IntervalProbe>,
    pub failures: Vec<RecordFailure>,
}

/// Scores every record under one guidance method.
///
/// Per record: complete the initial transcript, re-prepend the prefill to
/// the raw completion for storage, append the final-answer elicitation, and
/// extract the verdict from the second completion.
pub fn run_method(
    client: &Client,
    records: &[ImageRecord],
    guidance: &GuidanceSpec,
    params: &DecodeParams,
) -> RunOutput {
    let method_id = guidance.method_id();
    let results: Vec<Result<Prediction, RecordFailure>> = records
        .par_iter()
        .map(|record| score_record(client, record, guidance, params).map_err(|e| e.into_failure(record, &method_id, None)))
        .collect();
    let mut predictions = Vec::with_capacity(records.len());
    let mut failures = Vec::new();
    for result in results {
        match result {
            Ok(p) => predictions.push(p),
            Err(f) => failures.push(f),
        }
    }
    RunOutput { method_id, predictions, failures }
}

struct StepError {
    message: String,
    digest: Option<String>,
}

impl StepError {
    fn into_failure(
        self,
        record: &ImageRecord,
        method_id: &str,
        fraction: Option<f64>,
    ) -> RecordFailure {
        RecordFailure {
            record_id: record.id.clone(),
            method_id: method_id.to_string(),
            fraction,
            message: self.message,
            digest: self.digest,
        }
    }
}

impl From<crate::client::ClientError> for StepError {
    fn from(e: crate::client::ClientError) -> Self {
        StepError { digest: e.digest().map(str::to_string), message: e.to_string() }
    }
}

fn score_record(
    client: &Client,
    record: &ImageRecord,
    guidance: &GuidanceSpec,
    params: &DecodeParams,
) -> Result<Prediction, StepError> {
    let initial = build_initial_transcript(record, guidance);
    let first = client.complete(&initial, params)?;

    // persist the response as the model "said" it: prefill re-attached
    let prefill = initial.assistant_prefill.as_deref().unwrap_or("");
    let stored_first = format!("{prefill}{}", first.text);

    let final_transcript = build_final_answer_transcript(&initial, &first.text);
    let answer = client.complete(&final_transcript, params)?;
    let extraction = extract_verdict(&answer.text);

    Ok(Prediction {
        record_id: record.id.clone(),
        verdict: extraction.verdict,
        unparsed: extraction.unparsed,
        raw_first_response: stored_first,
        raw_final_answer: answer.text,
    })
}

/// Probes every record at each reasoning fraction.
///
/// Stage one reuses the main-run parameters; each probe then truncates the
/// completion to `floor(fraction · sentences)` sentences and asks for a
/// short, logprob-scored answer. The prefill never counts toward the
/// sentence total but is always re-attached to the truncated text.
pub fn run_probe(
    client: &Client,
    records: &[ImageRecord],
    guidance: &GuidanceSpec,
    params: &DecodeParams,
) -> ProbeOutput {
    let method_id = guidance.method_id();
    let probe_params = DecodeParams { want_logprobs: true, max_tokens: 20, ..*params };
    let results: Vec<Result<Vec<IntervalProbe>, RecordFailure>> = records
        .par_iter()
        .map(|record| probe_record(client, record, guidance, params, &probe_params, &method_id))
        .collect();
    let mut probes = Vec::with_capacity(records.len() * FRACTIONS.len());
    let mut failures = Vec::new();
    for result in results {
        match result {
            Ok(mut p) => probes.append(&mut p),
            Err(f) => failures.push(f),
        }
    }
    ProbeOutput { method_id, probes, failures }
}

fn probe_record(
    client: &Client,
    record: &ImageRecord,
    guidance: &GuidanceSpec,
    params: &DecodeParams,
    probe_params: &DecodeParams,
    method_id: &str,
) -> Result<Vec<IntervalProbe>, RecordFailure> {
    let initial = build_initial_transcript(record, guidance);
    let first = client
        .complete(&initial, params)
        .map_err(|e| StepError::from(e).into_failure(record, method_id, None))?;

    let prefill = initial.assistant_prefill.as_deref().unwrap_or("");
    let spans = segment_sentences(&first.text);

    let mut out = Vec::with_capacity(FRACTIONS.len());
    for fraction in FRACTIONS {
        let partial = partial_response(prefill, &first.text, &spans, fraction);
        let transcript = build_probe_transcript(&initial, &partial);
        let response = client
            .complete(&transcript, probe_params)
            .map_err(|e| StepError::from(e).into_failure(record, method_id, Some(fraction)))?;
        let extraction = extract_verdict(&response.text);
        out.push(IntervalProbe {
            record_id: record.id.clone(),
            method_id: method_id.to_string(),
            fraction,
            verdict: extraction.verdict,
            unparsed: extraction.unparsed,
            mean_logprob: response.mean_logprob(),
            token_logprobs: response.tokens.iter().map(|t| t.logprob).collect(),
        });
    }
    Ok(out)
}
