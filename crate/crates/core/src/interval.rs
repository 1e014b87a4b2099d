//! Partial-response confidence probing: sentence segmentation, truncated
//! transcript construction, and aggregation of probe results into
//! per-fraction summaries.

use std::collections::BTreeMap;

use crate::metrics::macro_f1;
use crate::model::{ConfusionMatrix, Verdict};

/// Reasoning fractions probed for every record.
pub const FRACTIONS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Byte range of one sentence within the original completion text.
///
/// Spans exclude leading and trailing whitespace; every non-whitespace byte
/// of the text belongs to exactly one span, so the spans plus the whitespace
/// between them reconstruct the text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
}

/// Splits completion text into sentence spans.
///
/// A sentence ends after `.`, `!` or `?` when the next character is
/// whitespace or the text ends, so decimals like `2.5` never split. A
/// newline also terminates the current sentence regardless of punctuation,
/// which keeps list headers such as `observations:` separate from the list
/// that follows. Bare enumerators (`1.`, `2.` …) produced by the punctuation
/// rule are merged into the sentence they introduce.
pub fn segment_sentences(text: &str) -> Vec<SentenceSpan> {
    let mut raw: Vec<SentenceSpan> = Vec::new();
    let mut span_start: Option<usize> = None;
    let mut last_end = 0usize;

    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c.is_whitespace() {
            if (c == '\n' || c == '\r') && span_start.is_some() {
                raw.push(SentenceSpan { start: span_start.take().unwrap(), end: last_end });
            }
            continue;
        }
        if span_start.is_none() {
            span_start = Some(i);
        }
        last_end = i + c.len_utf8();
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = match chars.peek() {
                None => true,
                Some((_, next)) => next.is_whitespace(),
            };
            if at_boundary {
                raw.push(SentenceSpan { start: span_start.take().unwrap(), end: last_end });
            }
        }
    }
    if let Some(start) = span_start {
        raw.push(SentenceSpan { start, end: last_end });
    }

    merge_enumerators(text, raw)
}

/// Folds spans that are nothing but an item number (digits and dots, e.g.
/// `3.` or `1.2.`) into the span that follows them. A run of consecutive
/// enumerators keeps the start of the first one; a trailing enumerator with
/// no sentence after it survives as its own span.
fn merge_enumerators(text: &str, raw: Vec<SentenceSpan>) -> Vec<SentenceSpan> {
    let mut merged: Vec<SentenceSpan> = Vec::with_capacity(raw.len());
    let mut pending: Option<SentenceSpan> = None;
    for span in raw {
        if is_enumerator(&text[span.start..span.end]) {
            pending = Some(match pending {
                Some(p) => SentenceSpan { start: p.start, end: span.end },
                None => span,
            });
        } else {
            let start = pending.take().map_or(span.start, |p| p.start);
            merged.push(SentenceSpan { start, end: span.end });
        }
    }
    if let Some(p) = pending {
        merged.push(p);
    }
    merged
}

fn is_enumerator(s: &str) -> bool {
    s.chars().any(|c| c.is_ascii_digit()) && s.chars().all(|c| c.is_ascii_digit() || c == '.')
}

/// Truncates a completion to the first `floor(fraction · N)` of its `N`
/// sentences and re-attaches the prefill.
///
/// `spans` must come from [`segment_sentences`] over `original`. At
/// `fraction >= 1.0` the result is the prefill plus the untruncated text,
/// byte for byte; at a fraction low enough that no sentence survives, it is
/// the prefill alone. Results for increasing fractions are prefixes of one
/// another.
pub fn partial_response(
    prefill: &str,
    original: &str,
    spans: &[SentenceSpan],
    fraction: f64,
) -> String {
    if fraction >= 1.0 {
        return format!("{prefill}{original}");
    }
    let n = spans.len();
    let k = if fraction <= 0.0 { 0 } else { (fraction * n as f64).floor() as usize };
    if k == 0 {
        prefill.to_string()
    } else {
        format!("{prefill}{}", &original[..spans[k - 1].end])
    }
}

/// How confidence probes are grouped when summarizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhraseGrouping {
    /// Group by guidance mode, averaging the per-phrase statistics of every
    /// phrase run under that mode (default).
    #[default]
    AverageAcrossPhrases,
    /// Keep each `mode:phrase` method as its own group.
    PerPhrase,
}

/// How mean token log-probabilities are turned into a probability-scale
/// confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConfidenceAveraging {
    /// Average in log space and exponentiate the result (default).
    #[default]
    LogSpace,
    /// Exponentiate per record and average the probabilities.
    ProbSpace,
}

/// One probe completion: the verdict the model committed to after seeing
/// a truncated response, plus the probe answer's token log-probabilities.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntervalProbe {
    pub record_id: String,
    pub method_id: String,
    pub fraction: f64,
    pub verdict: Verdict,
    pub unparsed: bool,
    /// Mean log-probability of the probe answer tokens.
    pub mean_logprob: f64,
    pub token_logprobs: Vec<f64>,
}

/// Aggregated statistics for one (group, fraction) cell.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntervalSummary {
    pub group: String,
    pub fraction: f64,
    /// Mean of per-record mean log-probabilities (averaged across phrases
    /// when grouping by mode).
    pub mean_logprob: f64,
    /// Probability-scale confidence derived per [`ConfidenceAveraging`].
    pub normalized_confidence: f64,
    pub macro_f1: f64,
    /// Number of probes pooled into this cell.
    pub n: usize,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum IntervalError {
    #[error("no true label for record {record_id}")]
    MissingLabel { record_id: String },
}

/// Stable key for a probe fraction: hundredths, rounded. Keeps map ordering
/// exact for the dyadic probe fractions.
fn fraction_key(fraction: f64) -> u32 {
    (fraction * 100.0).round() as u32
}

#[derive(Default)]
struct PhraseCell {
    logprobs: Vec<f64>,
    confusion: ConfusionMatrix,
    n: usize,
}

/// Summarizes probes into per-(group, fraction) rows, sorted by group then
/// fraction.
///
/// `labels` maps record ids to true labels and must cover every probed
/// record. Statistics are computed per phrase first — mean log-probability
/// across records and Macro F1 over the pooled confusion matrix — and, under
/// [`PhraseGrouping::AverageAcrossPhrases`], averaged arithmetically across
/// the phrases sharing a guidance mode.
pub fn aggregate(
    probes: &[IntervalProbe],
    labels: &BTreeMap<String, Verdict>,
    grouping: PhraseGrouping,
    averaging: ConfidenceAveraging,
) -> Result<Vec<IntervalSummary>, IntervalError> {
    // pass 1: per (method, fraction) cells
    let mut cells: BTreeMap<(String, u32), PhraseCell> = BTreeMap::new();
    for probe in probes {
        let label = labels
            .get(&probe.record_id)
            .copied()
            .ok_or_else(|| IntervalError::MissingLabel { record_id: probe.record_id.clone() })?;
        let cell = cells
            .entry((probe.method_id.clone(), fraction_key(probe.fraction)))
            .or_default();
        cell.logprobs.push(probe.mean_logprob);
        cell.confusion.record(label, probe.verdict);
        cell.n += 1;
    }

    // pass 2: phrase-level statistics, grouped per the grouping rule
    struct GroupAcc {
        log_means: Vec<f64>,
        prob_means: Vec<f64>,
        f1s: Vec<f64>,
        n: usize,
    }
    let mut groups: BTreeMap<(String, u32), GroupAcc> = BTreeMap::new();
    for ((method_id, fkey), cell) in cells {
        let count = cell.logprobs.len() as f64;
        let log_mean = cell.logprobs.iter().sum::<f64>() / count;
        let prob_mean = cell.logprobs.iter().map(|lp| lp.exp()).sum::<f64>() / count;
        let f1 = macro_f1(&cell.confusion);
        let group = match grouping {
            PhraseGrouping::AverageAcrossPhrases => {
                method_id.split(':').next().unwrap_or(&method_id).to_string()
            }
            PhraseGrouping::PerPhrase => method_id,
        };
        let acc = groups.entry((group, fkey)).or_insert_with(|| GroupAcc {
            log_means: Vec::new(),
            prob_means: Vec::new(),
            f1s: Vec::new(),
            n: 0,
        });
        acc.log_means.push(log_mean);
        acc.prob_means.push(prob_mean);
        acc.f1s.push(f1);
        acc.n += cell.n;
    }

    Ok(groups
        .into_iter()
        .map(|((group, fkey), acc)| {
            let phrases = acc.log_means.len() as f64;
            let mean_logprob = acc.log_means.iter().sum::<f64>() / phrases;
            let normalized_confidence = match averaging {
                ConfidenceAveraging::LogSpace => mean_logprob.exp(),
                ConfidenceAveraging::ProbSpace => {
                    acc.prob_means.iter().sum::<f64>() / phrases
                }
            };
            IntervalSummary {
                group,
                fraction: fkey as f64 / 100.0,
                mean_logprob,
                normalized_confidence,
                macro_f1: acc.f1s.iter().sum::<f64>() / phrases,
                n: acc.n,
            }
        })
        .collect())
}
