//! Result files written by `run`, `probe`, and `report`.
//!
//! Everything except `run.log` is byte-deterministic for a given set of
//! inputs: JSONL rows in record order, CSV floats in shortest round-trip
//! form, and SVG charts with fixed geometry. `run.log` is the one file
//! that carries wall-clock timestamps.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use aidet_client::RecordFailure;
use aidet_core::{IntervalProbe, Prediction};
use thiserror::Error;

use crate::chart::{self, F1Bar, IntervalPoint, RecallBar};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("csv {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {reason}")]
    Schema { path: PathBuf, reason: String },
}

impl ReportError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    fn schema(path: &Path, reason: impl Into<String>) -> Self {
        Self::Schema { path: path.to_path_buf(), reason: reason.into() }
    }
}

/// One `metrics.csv` row: headline numbers for a scored method.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub dataset: String,
    pub macro_f1: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub unparsed_rate: f64,
}

/// One `recall.csv` row: recall of a method on a single generator.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallRow {
    pub method: String,
    pub dataset: String,
    pub generator: String,
    pub recall: f64,
    pub support: u64,
}

/// One `intervals.csv` row: confidence and accuracy at a reasoning fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRow {
    pub method: String,
    pub fraction: f64,
    pub mean_confidence: f64,
    pub normalized_confidence: f64,
    pub macro_f1: f64,
    pub n: usize,
}

/// Maps a method id onto a filename fragment: every character outside
/// `[A-Za-z0-9_-]` becomes `_`, so `prefill:cot` → `prefill_cot`.
pub fn sanitize_method(method: &str) -> String {
    method
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

fn jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<(), ReportError> {
    let file = File::create(path).map_err(|e| ReportError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row)
            .map_err(|e| ReportError::io(path, io::Error::new(io::ErrorKind::InvalidData, e)))?;
        writeln!(out, "{line}").map_err(|e| ReportError::io(path, e))?;
    }
    out.flush().map_err(|e| ReportError::io(path, e))
}

/// Writes `predictions_<method>.jsonl` and returns the path.
pub fn write_predictions(
    dir: &Path,
    method_id: &str,
    predictions: &[Prediction],
) -> Result<PathBuf, ReportError> {
    let path = dir.join(format!("predictions_{}.jsonl", sanitize_method(method_id)));
    jsonl(&path, predictions)?;
    Ok(path)
}

/// Writes `probes_<method>.jsonl` and returns the path.
pub fn write_probes(
    dir: &Path,
    method_id: &str,
    probes: &[IntervalProbe],
) -> Result<PathBuf, ReportError> {
    let path = dir.join(format!("probes_{}.jsonl", sanitize_method(method_id)));
    jsonl(&path, probes)?;
    Ok(path)
}

/// Writes `failures.jsonl` (always, even when empty, so its presence is
/// not a signal by itself).
pub fn write_failures(dir: &Path, failures: &[RecordFailure]) -> Result<PathBuf, ReportError> {
    let path = dir.join("failures.jsonl");
    jsonl(&path, failures)?;
    Ok(path)
}

const METRICS_HEADER: [&str; 6] =
    ["method", "dataset", "macro_f1", "ci_low", "ci_high", "unparsed_rate"];
const RECALL_HEADER: [&str; 5] = ["method", "dataset", "generator", "recall", "support"];
const INTERVALS_HEADER: [&str; 6] =
    ["method", "fraction", "mean_confidence", "normalized_confidence", "macro_f1", "n"];

pub fn write_metrics_csv(dir: &Path, rows: &[MetricsRow]) -> Result<PathBuf, ReportError> {
    let path = dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| ReportError::Csv { path: path.clone(), source: e })?;
    let fail = |e| ReportError::Csv { path: path.clone(), source: e };
    w.write_record(METRICS_HEADER).map_err(fail)?;
    for r in rows {
        w.write_record([
            r.method.as_str(),
            r.dataset.as_str(),
            &format!("{}", r.macro_f1),
            &format!("{}", r.ci_low),
            &format!("{}", r.ci_high),
            &format!("{}", r.unparsed_rate),
        ])
        .map_err(|e| ReportError::Csv { path: path.clone(), source: e })?;
    }
    w.flush().map_err(|e| ReportError::io(&path, e))?;
    Ok(path)
}

pub fn write_recall_csv(dir: &Path, rows: &[RecallRow]) -> Result<PathBuf, ReportError> {
    let path = dir.join("recall.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| ReportError::Csv { path: path.clone(), source: e })?;
    w.write_record(RECALL_HEADER)
        .map_err(|e| ReportError::Csv { path: path.clone(), source: e })?;
    for r in rows {
        w.write_record([
            r.method.as_str(),
            r.dataset.as_str(),
            r.generator.as_str(),
            &format!("{}", r.recall),
            &format!("{}", r.support),
        ])
        .map_err(|e| ReportError::Csv { path: path.clone(), source: e })?;
    }
    w.flush().map_err(|e| ReportError::io(&path, e))?;
    Ok(path)
}

pub fn write_intervals_csv(dir: &Path, rows: &[IntervalRow]) -> Result<PathBuf, ReportError> {
    let path = dir.join("intervals.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| ReportError::Csv { path: path.clone(), source: e })?;
    w.write_record(INTERVALS_HEADER)
        .map_err(|e| ReportError::Csv { path: path.clone(), source: e })?;
    for r in rows {
        w.write_record([
            r.method.as_str(),
            &format!("{}", r.fraction),
            &format!("{}", r.mean_confidence),
            &format!("{}", r.normalized_confidence),
            &format!("{}", r.macro_f1),
            &format!("{}", r.n),
        ])
        .map_err(|e| ReportError::Csv { path: path.clone(), source: e })?;
    }
    w.flush().map_err(|e| ReportError::io(&path, e))?;
    Ok(path)
}

fn open_csv(path: &Path, want: &[&str]) -> Result<csv::Reader<File>, ReportError> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| ReportError::Csv { path: path.into(), source: e })?;
    let got = reader
        .headers()
        .map_err(|e| ReportError::Csv { path: path.into(), source: e })?
        .clone();
    if got.iter().ne(want.iter().copied()) {
        return Err(ReportError::schema(
            path,
            format!("expected columns {want:?}, found {:?}", got.iter().collect::<Vec<_>>()),
        ));
    }
    Ok(reader)
}

fn field<T: std::str::FromStr>(
    path: &Path,
    record: &csv::StringRecord,
    idx: usize,
) -> Result<T, ReportError>
where
    T::Err: std::fmt::Display,
{
    let raw = record
        .get(idx)
        .ok_or_else(|| ReportError::schema(path, format!("missing column {idx}")))?;
    raw.parse()
        .map_err(|e| ReportError::schema(path, format!("bad value {raw:?} in column {idx}: {e}")))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>, ReportError> {
    let mut reader = open_csv(path, &METRICS_HEADER)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| ReportError::Csv { path: path.into(), source: e })?;
        rows.push(MetricsRow {
            method: field(path, &record, 0)?,
            dataset: field(path, &record, 1)?,
            macro_f1: field(path, &record, 2)?,
            ci_low: field(path, &record, 3)?,
            ci_high: field(path, &record, 4)?,
            unparsed_rate: field(path, &record, 5)?,
        });
    }
    Ok(rows)
}

pub fn read_recall_csv(path: &Path) -> Result<Vec<RecallRow>, ReportError> {
    let mut reader = open_csv(path, &RECALL_HEADER)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| ReportError::Csv { path: path.into(), source: e })?;
        rows.push(RecallRow {
            method: field(path, &record, 0)?,
            dataset: field(path, &record, 1)?,
            generator: field(path, &record, 2)?,
            recall: field(path, &record, 3)?,
            support: field(path, &record, 4)?,
        });
    }
    Ok(rows)
}

pub fn read_intervals_csv(path: &Path) -> Result<Vec<IntervalRow>, ReportError> {
    let mut reader = open_csv(path, &INTERVALS_HEADER)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| ReportError::Csv { path: path.into(), source: e })?;
        rows.push(IntervalRow {
            method: field(path, &record, 0)?,
            fraction: field(path, &record, 1)?,
            mean_confidence: field(path, &record, 2)?,
            normalized_confidence: field(path, &record, 3)?,
            macro_f1: field(path, &record, 4)?,
            n: field(path, &record, 5)?,
        });
    }
    Ok(rows)
}

/// Human-readable digest of a run, shared by `summary.txt` and `report.txt`.
pub fn summary_text(
    metrics: &[MetricsRow],
    recalls: &[RecallRow],
    improvement: Option<&str>,
    failed: usize,
) -> String {
    let mut out = String::new();
    out.push_str("method scores (macro F1 [95% CI], unparsed rate)\n");
    for m in metrics {
        out.push_str(&format!(
            "  {:<24} {:.4} [{:.4}, {:.4}]  unparsed {:.4}\n",
            m.method, m.macro_f1, m.ci_low, m.ci_high, m.unparsed_rate
        ));
    }
    out.push_str("\nrecall per generator\n");
    for r in recalls {
        out.push_str(&format!(
            "  {:<24} {:<16} {:.4}  (n={})\n",
            r.method, r.generator, r.recall, r.support
        ));
    }
    if let Some(line) = improvement {
        out.push('\n');
        out.push_str(line);
        out.push('\n');
    }
    if failed > 0 {
        out.push_str(&format!("\n{failed} record(s) failed; see failures.jsonl\n"));
    }
    out
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf, ReportError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| ReportError::io(&path, e))?;
    Ok(path)
}

/// Renders `f1_macro.svg` and `recall.svg` from the CSV row types.
pub fn write_run_charts(
    dir: &Path,
    metrics: &[MetricsRow],
    recalls: &[RecallRow],
) -> Result<(), ReportError> {
    let bars: Vec<F1Bar> = metrics
        .iter()
        .map(|m| F1Bar {
            method: m.method.clone(),
            macro_f1: m.macro_f1,
            ci_low: m.ci_low,
            ci_high: m.ci_high,
        })
        .collect();
    write_text(dir, "f1_macro.svg", &chart::f1_chart(&bars))?;
    let bars: Vec<RecallBar> = recalls
        .iter()
        .map(|r| RecallBar {
            method: r.method.clone(),
            generator: r.generator.clone(),
            recall: r.recall,
        })
        .collect();
    write_text(dir, "recall.svg", &chart::recall_chart(&bars))?;
    Ok(())
}

/// Renders `interval_progression.svg` from the CSV row type.
pub fn write_interval_chart(dir: &Path, rows: &[IntervalRow]) -> Result<(), ReportError> {
    let points: Vec<IntervalPoint> = rows
        .iter()
        .map(|r| IntervalPoint {
            group: r.method.clone(),
            fraction: r.fraction,
            normalized_confidence: r.normalized_confidence,
            macro_f1: r.macro_f1,
        })
        .collect();
    write_text(dir, "interval_progression.svg", &chart::interval_chart(&points))?;
    Ok(())
}

/// Append-only log with wall-clock timestamps; the only non-deterministic
/// output file.
pub struct RunLog {
    out: BufWriter<File>,
    path: PathBuf,
}

impl RunLog {
    pub fn create(dir: &Path) -> Result<Self, ReportError> {
        let path = dir.join("run.log");
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ReportError::io(&path, e))?;
        Ok(Self { out: BufWriter::new(file), path })
    }

    pub fn line(&mut self, message: &str) -> Result<(), ReportError> {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        writeln!(self.out, "[{secs}] {message}").map_err(|e| ReportError::io(&self.path, e))?;
        self.out.flush().map_err(|e| ReportError::io(&self.path, e))
    }
}
