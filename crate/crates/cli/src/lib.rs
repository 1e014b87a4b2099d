//! Command implementations behind the `aidet` binary.
//!
//! Each `cmd_*` function takes a plain config struct, performs one
//! subcommand end to end, and reports failure through [`CmdError`], whose
//! variants map onto the process exit codes: 2 for configuration and I/O
//! problems, 3 when a backend yields no usable predictions at all, 4 when a
//! run finishes but some records failed.

pub mod chart;
pub mod guidance;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use aidet_client::{run_method, run_probe, Client, ClientOptions, ResponseCache};
use aidet_core::{
    aggregate, bootstrap_macro_f1, bootstrap_relative_improvement, BootstrapOptions,
    BootstrapResult, ConfidenceAveraging, DecodeParams, GuidanceSpec, ImageRecord, Manifest,
    MethodRun, PhraseGrouping, Prediction, Verdict,
};
use thiserror::Error;

use report::{IntervalRow, MetricsRow, RecallRow, ReportError, RunLog};

#[derive(Debug, Error)]
pub enum CmdError {
    /// Bad arguments, unreadable inputs, or output-writing problems.
    #[error("{0}")]
    Config(String),
    /// A method produced zero predictions: the backend never gave a usable
    /// answer.
    #[error("{0}")]
    Backend(String),
    /// The run finished but some records failed; results are partial.
    #[error("{0}")]
    Partial(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Config(_) => 2,
            CmdError::Backend(_) => 3,
            CmdError::Partial(_) => 4,
        }
    }
}

impl From<ReportError> for CmdError {
    fn from(e: ReportError) -> Self {
        CmdError::Config(e.to_string())
    }
}

/// Connection settings shared by `run` and `probe`.
#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub max_in_flight: usize,
    pub retries: u32,
    pub timeout_secs: u64,
    pub cache_dir: Option<PathBuf>,
}

impl BackendConfig {
    fn client(&self) -> Result<Client, CmdError> {
        let cache = match &self.cache_dir {
            Some(dir) => Some(
                ResponseCache::open(dir.clone())
                    .map_err(|e| CmdError::Config(format!("open cache: {e}")))?,
            ),
            None => None,
        };
        let options = ClientOptions {
            base_url: self.base_url.clone(),
            api_key: self.api_key.clone(),
            model: self.model.clone(),
            max_in_flight: self.max_in_flight,
            timeout: Duration::from_secs(self.timeout_secs),
            retries: self.retries,
            ..ClientOptions::default()
        };
        Ok(Client::new(options, cache))
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub manifest_path: PathBuf,
    pub backend: BackendConfig,
    pub guidance: Vec<GuidanceSpec>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Decode seed (sent to the backend) and bootstrap seed.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub bootstrap_iterations: usize,
    pub bootstrap_level: f64,
    /// Method whose improvement over the others is reported; defaults to
    /// the method with the highest Macro F1.
    pub target_method: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub manifest_path: PathBuf,
    pub backend: BackendConfig,
    pub guidance: Vec<GuidanceSpec>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub grouping: PhraseGrouping,
    pub averaging: ConfidenceAveraging,
}

/// Headline metrics of one method, as computed over its scored records.
#[derive(Debug, Clone)]
pub struct MethodMetrics {
    pub method_id: String,
    pub macro_f1: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub unparsed_rate: f64,
    pub scored: usize,
    pub failed: usize,
}

/// Bootstrap comparison of the target method against the best competitor.
#[derive(Debug, Clone)]
pub struct ImprovementSummary {
    pub target: String,
    pub next_best: String,
    pub result: BootstrapResult,
}

#[derive(Debug)]
pub struct RunSummary {
    pub dataset: String,
    pub methods: Vec<MethodMetrics>,
    pub improvement: Option<ImprovementSummary>,
    pub failures: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug)]
pub struct ProbeSummary {
    pub rows: Vec<IntervalRow>,
    pub failures: usize,
    pub out_dir: PathBuf,
}

fn load_manifest(path: &Path) -> Result<Manifest, CmdError> {
    Manifest::load(path).map_err(|e| CmdError::Config(format!("{}: {e}", path.display())))
}

fn check_guidance(guidance: &[GuidanceSpec]) -> Result<(), CmdError> {
    if guidance.is_empty() {
        return Err(CmdError::Config("no guidance methods given".into()));
    }
    let mut seen = BTreeSet::new();
    for g in guidance {
        if !seen.insert(g.method_id()) {
            return Err(CmdError::Config(format!("duplicate guidance method {}", g.method_id())));
        }
    }
    Ok(())
}

fn dataset_name(manifest: &Manifest) -> String {
    manifest
        .header
        .as_ref()
        .and_then(|h| h.dataset.clone())
        .unwrap_or_else(|| "all".into())
}

fn decode_params(temperature: f64, max_tokens: u32, seed: u64) -> DecodeParams {
    DecodeParams { temperature, max_tokens, seed: seed as i64, want_logprobs: false }
}

/// Restricts `predictions` to `ids`, keeping prediction order, and returns
/// the matching records in manifest order.
fn restrict<'a>(
    records: &'a [ImageRecord],
    predictions: &'a [Prediction],
    ids: &BTreeSet<&str>,
) -> (Vec<ImageRecord>, Vec<Prediction>) {
    let keep: Vec<ImageRecord> =
        records.iter().filter(|r| ids.contains(r.id.as_str())).cloned().collect();
    let preds: Vec<Prediction> =
        predictions.iter().filter(|p| ids.contains(p.record_id.as_str())).cloned().collect();
    (keep, preds)
}

/// Scores every guidance method on the manifest, writes the result files,
/// and summarizes. Partial failures still produce complete outputs before
/// the command reports exit code 4.
pub fn cmd_run(config: &RunConfig) -> Result<RunSummary, CmdError> {
    check_guidance(&config.guidance)?;
    let manifest = load_manifest(&config.manifest_path)?;
    if manifest.records.is_empty() {
        return Err(CmdError::Config(format!(
            "{}: manifest has no records",
            config.manifest_path.display()
        )));
    }
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| CmdError::Config(format!("create {}: {e}", config.out_dir.display())))?;
    let mut log = RunLog::create(&config.out_dir)?;
    let dataset = dataset_name(&manifest);
    log.line(&format!(
        "run start: {} records, {} methods, model {}",
        manifest.records.len(),
        config.guidance.len(),
        config.backend.model
    ))?;

    let client = config.backend.client()?;
    let params = decode_params(config.temperature, config.max_tokens, config.seed);
    let bootstrap = BootstrapOptions {
        iterations: config.bootstrap_iterations,
        level: config.bootstrap_level,
        seed: config.seed,
        ..BootstrapOptions::default()
    };

    let mut all_failures = Vec::new();
    let mut outputs = Vec::new();
    for g in &config.guidance {
        let out = run_method(&client, &manifest.records, g, &params);
        log.line(&format!(
            "method {}: {} scored, {} failed",
            out.method_id,
            out.predictions.len(),
            out.failures.len()
        ))?;
        report::write_predictions(&config.out_dir, &out.method_id, &out.predictions)?;
        all_failures.extend(out.failures.clone());
        outputs.push(out);
    }
    report::write_failures(&config.out_dir, &all_failures)?;

    if let Some(empty) = outputs.iter().find(|o| o.predictions.is_empty()) {
        let message = format!(
            "method {} produced no predictions; backend at {} unusable",
            empty.method_id, config.backend.base_url
        );
        log.line(&message)?;
        return Err(CmdError::Backend(message));
    }

    // Per-method metrics over each method's own scored records.
    let mut metrics_rows = Vec::new();
    let mut recall_rows = Vec::new();
    let mut methods = Vec::new();
    let mut runs: Vec<MethodRun> = Vec::new();
    for out in &outputs {
        let scored: BTreeSet<&str> = out.predictions.iter().map(|p| p.record_id.as_str()).collect();
        let (records, predictions) = restrict(&manifest.records, &out.predictions, &scored);
        let run = MethodRun::join(&out.method_id, &records, &predictions)
            .map_err(|e| CmdError::Config(format!("method {}: {e}", out.method_id)))?;
        let ci = bootstrap_macro_f1(&run, &bootstrap)
            .map_err(|e| CmdError::Config(format!("bootstrap {}: {e}", out.method_id)))?;
        metrics_rows.push(MetricsRow {
            method: out.method_id.clone(),
            dataset: dataset.clone(),
            macro_f1: ci.point_estimate,
            ci_low: ci.ci_low,
            ci_high: ci.ci_high,
            unparsed_rate: run.unparsed_rate(),
        });
        for (generator, stat) in run.per_generator_recall() {
            recall_rows.push(RecallRow {
                method: out.method_id.clone(),
                dataset: dataset.clone(),
                generator,
                recall: stat.recall,
                support: stat.support,
            });
        }
        methods.push(MethodMetrics {
            method_id: out.method_id.clone(),
            macro_f1: ci.point_estimate,
            ci_low: ci.ci_low,
            ci_high: ci.ci_high,
            unparsed_rate: run.unparsed_rate(),
            scored: out.predictions.len(),
            failed: out.failures.len(),
        });
        runs.push(run);
    }

    let improvement = improvement_summary(
        &manifest.records,
        &outputs,
        &methods,
        config.target_method.as_deref(),
        &bootstrap,
    )?;
    let improvement_line = improvement.as_ref().map(format_improvement);

    report::write_metrics_csv(&config.out_dir, &metrics_rows)?;
    report::write_recall_csv(&config.out_dir, &recall_rows)?;
    report::write_run_charts(&config.out_dir, &metrics_rows, &recall_rows)?;
    let summary = report::summary_text(
        &metrics_rows,
        &recall_rows,
        improvement_line.as_deref(),
        all_failures.len(),
    );
    report::write_text(&config.out_dir, "summary.txt", &summary)?;
    log.line("run complete")?;

    let failures = all_failures.len();
    let summary = RunSummary {
        dataset,
        methods,
        improvement,
        failures,
        out_dir: config.out_dir.clone(),
    };
    if failures > 0 {
        return Err(CmdError::Partial(format!(
            "{failures} record(s) failed; partial results in {}",
            config.out_dir.display()
        )));
    }
    Ok(summary)
}

/// Picks the comparison target and bootstraps its relative improvement over
/// the best competitor, on the records every method scored.
fn improvement_summary(
    records: &[ImageRecord],
    outputs: &[aidet_client::RunOutput],
    methods: &[MethodMetrics],
    target_method: Option<&str>,
    bootstrap: &BootstrapOptions,
) -> Result<Option<ImprovementSummary>, CmdError> {
    if outputs.len() < 2 {
        return Ok(None);
    }
    // records scored by every method
    let mut common: BTreeSet<&str> = outputs[0].predictions.iter().map(|p| p.record_id.as_str()).collect();
    for out in &outputs[1..] {
        let ids: BTreeSet<&str> = out.predictions.iter().map(|p| p.record_id.as_str()).collect();
        common = common.intersection(&ids).copied().collect();
    }
    if common.is_empty() {
        return Ok(None);
    }

    let mut runs = Vec::new();
    for out in outputs {
        let (recs, preds) = restrict(records, &out.predictions, &common);
        let run = MethodRun::join(&out.method_id, &recs, &preds)
            .map_err(|e| CmdError::Config(format!("method {}: {e}", out.method_id)))?;
        runs.push(run);
    }

    let target_idx = match target_method {
        Some(name) => runs.iter().position(|r| r.method_id == name).ok_or_else(|| {
            CmdError::Config(format!("target method {name:?} is not among the evaluated methods"))
        })?,
        None => {
            let mut best = 0;
            for (i, m) in methods.iter().enumerate() {
                if m.macro_f1 > methods[best].macro_f1 {
                    best = i;
                }
            }
            best
        }
    };

    let others: Vec<&MethodRun> =
        runs.iter().enumerate().filter(|(i, _)| *i != target_idx).map(|(_, r)| r).collect();
    let next_best = others
        .iter()
        .max_by(|a, b| a.macro_f1().total_cmp(&b.macro_f1()))
        .map(|r| r.method_id.clone())
        .expect("at least one competitor");
    let result = bootstrap_relative_improvement(&runs[target_idx], &others, bootstrap)
        .map_err(|e| CmdError::Config(format!("bootstrap improvement: {e}")))?;
    Ok(Some(ImprovementSummary { target: runs[target_idx].method_id.clone(), next_best, result }))
}

pub fn format_improvement(imp: &ImprovementSummary) -> String {
    format!(
        "relative Macro-F1 improvement of {} over next best ({}): {:+.4} [{:+.4}, {:+.4}] ({:.0}% CI, {} resamples)",
        imp.target,
        imp.next_best,
        imp.result.point_estimate,
        imp.result.ci_low,
        imp.result.ci_high,
        imp.result.level * 100.0,
        imp.result.iterations
    )
}

/// Runs the confidence probe sweep for every guidance method and writes
/// `probes_*.jsonl`, `intervals.csv`, and the progression chart.
pub fn cmd_probe(config: &ProbeConfig) -> Result<ProbeSummary, CmdError> {
    check_guidance(&config.guidance)?;
    let manifest = load_manifest(&config.manifest_path)?;
    if manifest.records.is_empty() {
        return Err(CmdError::Config(format!(
            "{}: manifest has no records",
            config.manifest_path.display()
        )));
    }
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| CmdError::Config(format!("create {}: {e}", config.out_dir.display())))?;
    let mut log = RunLog::create(&config.out_dir)?;
    log.line(&format!(
        "probe start: {} records, {} methods, model {}",
        manifest.records.len(),
        config.guidance.len(),
        config.backend.model
    ))?;

    let client = config.backend.client()?;
    let params = decode_params(config.temperature, config.max_tokens, config.seed);
    let labels: BTreeMap<String, Verdict> =
        manifest.records.iter().map(|r| (r.id.clone(), r.true_label)).collect();

    let mut all_probes = Vec::new();
    let mut all_failures = Vec::new();
    for g in &config.guidance {
        let out = run_probe(&client, &manifest.records, g, &params);
        log.line(&format!(
            "method {}: {} probes, {} failed records",
            out.method_id,
            out.probes.len(),
            out.failures.len()
        ))?;
        report::write_probes(&config.out_dir, &out.method_id, &out.probes)?;
        if out.probes.is_empty() {
            let message = format!(
                "method {} produced no probes; backend at {} unusable",
                out.method_id, config.backend.base_url
            );
            log.line(&message)?;
            report::write_failures(&config.out_dir, &out.failures)?;
            return Err(CmdError::Backend(message));
        }
        all_probes.extend(out.probes);
        all_failures.extend(out.failures);
    }
    report::write_failures(&config.out_dir, &all_failures)?;

    let summaries = aggregate(&all_probes, &labels, config.grouping, config.averaging)
        .map_err(|e| CmdError::Config(e.to_string()))?;
    let rows: Vec<IntervalRow> = summaries
        .iter()
        .map(|s| IntervalRow {
            method: s.group.clone(),
            fraction: s.fraction,
            mean_confidence: s.mean_logprob,
            normalized_confidence: s.normalized_confidence,
            macro_f1: s.macro_f1,
            n: s.n,
        })
        .collect();
    report::write_intervals_csv(&config.out_dir, &rows)?;
    report::write_interval_chart(&config.out_dir, &rows)?;
    log.line("probe complete")?;

    let failures = all_failures.len();
    let summary = ProbeSummary { rows, failures, out_dir: config.out_dir.clone() };
    if failures > 0 {
        return Err(CmdError::Partial(format!(
            "{failures} record(s) failed; partial results in {}",
            config.out_dir.display()
        )));
    }
    Ok(summary)
}

/// Rebuilds charts and `report.txt` from the CSVs of an existing run
/// directory, without touching the backend.
pub fn cmd_report(dir: &Path) -> Result<Vec<PathBuf>, CmdError> {
    let metrics_path = dir.join("metrics.csv");
    let intervals_path = dir.join("intervals.csv");
    let mut written = Vec::new();

    let mut have_any = false;
    if metrics_path.exists() {
        have_any = true;
        let metrics = report::read_metrics_csv(&metrics_path)?;
        let recalls = report::read_recall_csv(&dir.join("recall.csv"))?;
        report::write_run_charts(dir, &metrics, &recalls)?;
        let text = report::summary_text(&metrics, &recalls, None, 0);
        written.push(report::write_text(dir, "report.txt", &text)?);
        written.push(dir.join("f1_macro.svg"));
        written.push(dir.join("recall.svg"));
    }
    if intervals_path.exists() {
        have_any = true;
        let rows = report::read_intervals_csv(&intervals_path)?;
        report::write_interval_chart(dir, &rows)?;
        written.push(dir.join("interval_progression.svg"));
    }
    if !have_any {
        return Err(CmdError::Config(format!(
            "{}: neither metrics.csv nor intervals.csv found",
            dir.display()
        )));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(CmdError::Config("x".into()).exit_code(), 2);
        assert_eq!(CmdError::Backend("x".into()).exit_code(), 3);
        assert_eq!(CmdError::Partial("x".into()).exit_code(), 4);
    }

    #[test]
    fn duplicate_methods_are_rejected() {
        let guidance = vec![GuidanceSpec::baseline(), GuidanceSpec::baseline()];
        let err = check_guidance(&guidance).unwrap_err();
        assert!(matches!(err, CmdError::Config(_)));
        assert!(check_guidance(&[]).is_err());
    }

    #[test]
    fn report_on_an_empty_directory_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = cmd_report(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
