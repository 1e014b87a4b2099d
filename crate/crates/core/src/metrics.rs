//! Detection metrics: confusion matrix, Macro F1, per-generator recall, and
//! paired bootstrap confidence intervals.
//!
//! Bootstrap resampling is deterministic for a given seed regardless of
//! thread count: every iteration derives an independent RNG from the run
//! seed and its own iteration index, so the rayon scheduling order cannot
//! influence the draws.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::{ConfusionMatrix, ImageRecord, Prediction};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("method run has no records")]
    EmptyRun,
    #[error("no prediction for record {record_id}")]
    MissingPrediction { record_id: String },
    #[error("prediction for unknown record {record_id}")]
    UnknownRecord { record_id: String },
    #[error("duplicate prediction for record {record_id}")]
    DuplicatePrediction { record_id: String },
    #[error("method runs cover different record sets")]
    MismatchedRecords,
    #[error("invalid bootstrap options: {reason}")]
    InvalidOptions { reason: String },
}

/// One record paired with the prediction a method produced for it.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoredPrediction {
    pub record: ImageRecord,
    pub prediction: Prediction,
}

/// All scored predictions one method produced over a manifest, in manifest
/// order.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MethodRun {
    pub method_id: String,
    pub items: Vec<ScoredPrediction>,
}

impl MethodRun {
    /// Joins predictions to records by id. Every record needs exactly one
    /// prediction and vice versa; the result follows record order.
    pub fn join(
        method_id: impl Into<String>,
        records: &[ImageRecord],
        predictions: &[Prediction],
    ) -> Result<Self, MetricsError> {
        let mut by_id: BTreeMap<&str, &Prediction> = BTreeMap::new();
        for p in predictions {
            if by_id.insert(p.record_id.as_str(), p).is_some() {
                return Err(MetricsError::DuplicatePrediction { record_id: p.record_id.clone() });
            }
        }
        let mut items = Vec::with_capacity(records.len());
        for r in records {
            let p = by_id.remove(r.id.as_str()).ok_or_else(|| {
                MetricsError::MissingPrediction { record_id: r.id.clone() }
            })?;
            items.push(ScoredPrediction { record: r.clone(), prediction: p.clone() });
        }
        if let Some((id, _)) = by_id.into_iter().next() {
            return Err(MetricsError::UnknownRecord { record_id: id.to_string() });
        }
        Ok(Self { method_id: method_id.into(), items })
    }

    /// Confusion matrix with AI-generated as the positive class.
    pub fn confusion(&self) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::default();
        for item in &self.items {
            cm.record(item.record.true_label, item.prediction.verdict);
        }
        cm
    }

    /// Macro F1 over the full run.
    pub fn macro_f1(&self) -> f64 {
        macro_f1(&self.confusion())
    }

    /// Recall per generator tag, including the "real" group. Recall of a
    /// group is the fraction of its records whose predicted verdict equals
    /// the true label.
    pub fn per_generator_recall(&self) -> BTreeMap<String, RecallStat> {
        let mut acc: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
        for item in &self.items {
            let slot = acc.entry(item.record.generator.as_str()).or_insert((0, 0));
            slot.1 += 1;
            if item.prediction.verdict == item.record.true_label {
                slot.0 += 1;
            }
        }
        acc.into_iter()
            .map(|(gen, (correct, total))| {
                (gen.to_string(), RecallStat { recall: correct as f64 / total as f64, support: total })
            })
            .collect()
    }

    /// Fraction of predictions whose final answer matched no keyword.
    pub fn unparsed_rate(&self) -> f64 {
        if self.items.is_empty() {
            return 0.0;
        }
        let n = self.items.iter().filter(|i| i.prediction.unparsed).count();
        n as f64 / self.items.len() as f64
    }

    fn confusion_at(&self, indices: &[usize]) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::default();
        for &i in indices {
            let item = &self.items[i];
            cm.record(item.record.true_label, item.prediction.verdict);
        }
        cm
    }
}

/// Recall for one generator group.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RecallStat {
    pub recall: f64,
    pub support: u64,
}

/// Macro-averaged F1 over the two classes.
///
/// Per-class F1 is `2·TP / (2·TP + FP + FN)` with a zero denominator scored
/// as 0; the macro score is the arithmetic mean of the two class scores, so
/// an empty matrix scores 0.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    let f1_ai = class_f1(cm.tp, cm.fp, cm.fn_);
    let f1_real = class_f1(cm.tn, cm.fn_, cm.fp);
    (f1_ai + f1_real) / 2.0
}

fn class_f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// How the comparison baseline is chosen inside each bootstrap resample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NextBestRule {
    /// Re-pick the best competing method within every resample (default).
    #[default]
    PerResample,
    /// Fix the competing method to the one that is best on the full sample
    /// and track only its resampled score.
    FixedFromPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub iterations: usize,
    /// Two-sided confidence level, e.g. 0.95.
    pub level: f64,
    pub seed: u64,
    pub next_best: NextBestRule,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { iterations: 10_000, level: 0.95, seed: 0, next_best: NextBestRule::PerResample }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BootstrapResult {
    pub point_estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub iterations: usize,
    pub level: f64,
    pub seed: u64,
}

/// Relative Macro-F1 improvement of `target` over the best of `others`.
///
/// Returns 0 when the two scores tie, positive infinity when the best
/// competitor scores 0 while the target does not, and the signed relative
/// difference otherwise.
pub fn relative_improvement(target_f1: f64, next_best_f1: f64) -> f64 {
    if target_f1 == next_best_f1 {
        0.0
    } else if next_best_f1 == 0.0 {
        f64::INFINITY
    } else {
        (target_f1 - next_best_f1) / next_best_f1
    }
}

/// Paired bootstrap CI for the relative Macro-F1 improvement of `target`
/// over the strongest method in `others`.
///
/// Each iteration draws one index vector (with replacement, uniform over
/// records) and applies it to every method, preserving the pairing between
/// methods on the same images. The iteration RNG is
/// `ChaCha8Rng::seed_from_u64(seed)` switched to stream `i`, making results
/// independent of evaluation order.
pub fn bootstrap_relative_improvement(
    target: &MethodRun,
    others: &[&MethodRun],
    opts: &BootstrapOptions,
) -> Result<BootstrapResult, MetricsError> {
    validate_options(opts)?;
    if others.is_empty() {
        return Err(MetricsError::InvalidOptions {
            reason: "need at least one comparison method".into(),
        });
    }
    let n = target.items.len();
    if n == 0 {
        return Err(MetricsError::EmptyRun);
    }
    for run in others {
        if run.items.len() != n
            || run
                .items
                .iter()
                .zip(&target.items)
                .any(|(a, b)| a.record.id != b.record.id)
        {
            return Err(MetricsError::MismatchedRecords);
        }
    }

    let point_target = target.macro_f1();
    let full_scores: Vec<f64> = others.iter().map(|r| r.macro_f1()).collect();
    let point_next_best = full_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let fixed_idx = full_scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("others is non-empty");
    let point_estimate = relative_improvement(point_target, point_next_best);

    let stats: Vec<f64> = (0..opts.iterations)
        .into_par_iter()
        .map(|iter| {
            let indices = resample_indices(opts.seed, iter as u64, n);
            let t = macro_f1(&target.confusion_at(&indices));
            let nb = match opts.next_best {
                NextBestRule::PerResample => others
                    .iter()
                    .map(|r| macro_f1(&r.confusion_at(&indices)))
                    .fold(f64::NEG_INFINITY, f64::max),
                NextBestRule::FixedFromPoint => macro_f1(&others[fixed_idx].confusion_at(&indices)),
            };
            relative_improvement(t, nb)
        })
        .collect();

    let (ci_low, ci_high) = percentile_interval(stats, opts.level);
    Ok(BootstrapResult {
        point_estimate,
        ci_low,
        ci_high,
        iterations: opts.iterations,
        level: opts.level,
        seed: opts.seed,
    })
}

/// Bootstrap CI for a single method's Macro F1, using the same per-iteration
/// RNG derivation as the paired comparison.
pub fn bootstrap_macro_f1(
    run: &MethodRun,
    opts: &BootstrapOptions,
) -> Result<BootstrapResult, MetricsError> {
    validate_options(opts)?;
    let n = run.items.len();
    if n == 0 {
        return Err(MetricsError::EmptyRun);
    }
    let stats: Vec<f64> = (0..opts.iterations)
        .into_par_iter()
        .map(|iter| {
            let indices = resample_indices(opts.seed, iter as u64, n);
            macro_f1(&run.confusion_at(&indices))
        })
        .collect();
    let (ci_low, ci_high) = percentile_interval(stats, opts.level);
    Ok(BootstrapResult {
        point_estimate: run.macro_f1(),
        ci_low,
        ci_high,
        iterations: opts.iterations,
        level: opts.level,
        seed: opts.seed,
    })
}

fn validate_options(opts: &BootstrapOptions) -> Result<(), MetricsError> {
    if opts.iterations == 0 {
        return Err(MetricsError::InvalidOptions { reason: "iterations must be positive".into() });
    }
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(MetricsError::InvalidOptions {
            reason: format!("confidence level {} outside (0, 1)", opts.level),
        });
    }
    Ok(())
}

/// Index vector for bootstrap iteration `iteration` of a run seeded `seed`.
///
/// Public so independent re-implementations of the estimator can reproduce
/// the exact draws; the stream/seed split is part of the determinism
/// contract.
pub fn resample_indices(seed: u64, iteration: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Two-sided percentile interval with nearest-rank quantiles:
/// `idx = ceil(q·B) − 1`, clamped to the sample range.
fn percentile_interval(mut stats: Vec<f64>, level: f64) -> (f64, f64) {
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    (nearest_rank(&stats, alpha), nearest_rank(&stats, 1.0 - alpha))
}

pub(crate) fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let b = sorted.len();
    let idx = ((q * b as f64).ceil() as i64 - 1).clamp(0, b as i64 - 1) as usize;
    sorted[idx]
}
