//! `aidet` — zero-shot AI-image detection harness over chat-completions
//! backends.

use std::path::PathBuf;

use aidet_cli::{
    cmd_probe, cmd_report, cmd_run, format_improvement, guidance::parse_guidance, BackendConfig,
    CmdError, ProbeConfig, RunConfig,
};
use aidet_client::{MockScript, MockServer};
use aidet_core::{
    catalog_entries, sample_split, synth_fixture, ConfidenceAveraging, GuidanceSpec, Manifest,
    PhraseGrouping, StratifyField, DETECTION_QUESTION, FINAL_ANSWER_ELICITATION,
    PROBE_ELICITATION,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Methods evaluated when no `--guidance` is given.
const DEFAULT_GUIDANCE: [&str; 3] = ["baseline", "prefill:cot", "prefill:s2"];

#[derive(Parser)]
#[command(
    name = "aidet",
    version,
    about = "Evaluates prefill-guided detection of AI-generated images on a chat-completions backend"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score guidance methods on a manifest and write metrics, charts, and
    /// per-record predictions.
    Run(RunArgs),
    /// Truncate reasoning at several fractions and measure answer
    /// confidence at each cut.
    Probe(ProbeArgs),
    /// Regenerate charts and report.txt from the CSVs of a finished run.
    Report(ReportArgs),
    /// Serve a scripted chat-completions backend for demos and tests.
    MockServe(MockServeArgs),
    /// Generate a small synthetic image manifest for smoke tests.
    Fixture(FixtureArgs),
    /// Draw a random (optionally stratified) subset of a manifest.
    Sample(SampleArgs),
    /// List the built-in guidance phrases and transcript constants.
    Phrases,
}

#[derive(Args)]
struct BackendArgs {
    /// Chat-completions base URL (default: $AIDET_BASE_URL, then
    /// http://127.0.0.1:8080). The key is read from $AIDET_API_KEY.
    #[arg(long)]
    backend_url: Option<String>,
    /// Model name sent with every request.
    #[arg(long, default_value = "default")]
    model: String,
    /// Upper bound on simultaneous in-flight requests.
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    /// Retry attempts for transport errors, 429s, and 5xx responses.
    #[arg(long, default_value_t = 2)]
    retries: u32,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
    /// Response cache directory; reruns serve identical requests from disk.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

impl BackendArgs {
    fn to_config(&self) -> BackendConfig {
        let base_url = self
            .backend_url
            .clone()
            .or_else(|| std::env::var("AIDET_BASE_URL").ok())
            .unwrap_or_else(|| "http://127.0.0.1:8080".into());
        BackendConfig {
            base_url,
            api_key: std::env::var("AIDET_API_KEY").ok(),
            model: self.model.clone(),
            max_in_flight: self.max_in_flight,
            retries: self.retries,
            timeout_secs: self.timeout_secs,
            cache_dir: self.cache_dir.clone(),
        }
    }
}

#[derive(Args)]
struct GuidanceArgs {
    /// Guidance method, repeatable: "baseline" or "<mode>:<phrase>" with
    /// mode prefill|pseudo-prefill|prompt and phrase cot|s2|observe|
    /// artifacts-only|style-only|details|flaws|custom.
    /// Default: baseline prefill:cot prefill:s2.
    #[arg(long = "guidance", value_name = "SPEC")]
    guidance: Vec<String>,
    /// Phrase text used by the `custom` phrase id.
    #[arg(long)]
    phrase: Option<String>,
}

impl GuidanceArgs {
    fn parse(&self) -> Result<Vec<GuidanceSpec>, CmdError> {
        let specs: Vec<&str> = if self.guidance.is_empty() {
            DEFAULT_GUIDANCE.to_vec()
        } else {
            self.guidance.iter().map(String::as_str).collect()
        };
        specs
            .iter()
            .map(|s| parse_guidance(s, self.phrase.as_deref()).map_err(CmdError::Config))
            .collect()
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSONL manifest of image records.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for metrics, predictions, and charts.
    #[arg(long, default_value = "runs/latest")]
    out_dir: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    guidance: GuidanceArgs,
    /// Decode and bootstrap seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Token budget for the free-form first stage.
    #[arg(long, default_value_t = 512)]
    max_tokens: u32,
    #[arg(long, default_value_t = 10_000)]
    bootstrap_iters: usize,
    /// Two-sided confidence level for bootstrap intervals.
    #[arg(long, default_value_t = 0.95)]
    bootstrap_level: f64,
    /// Method whose improvement over the rest is reported (default: the
    /// best-scoring one).
    #[arg(long)]
    target_method: Option<String>,
}

#[derive(Args)]
struct ProbeArgs {
    /// JSONL manifest of image records.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for probes, intervals.csv, and the chart.
    #[arg(long, default_value = "runs/latest")]
    out_dir: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    guidance: GuidanceArgs,
    /// Decode seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Token budget for the free-form first stage.
    #[arg(long, default_value_t = 512)]
    max_tokens: u32,
    /// How methods are grouped in intervals.csv.
    #[arg(long, value_enum, default_value_t = GroupingArg::Average)]
    grouping: GroupingArg,
    /// How log-probabilities become a probability-scale confidence.
    #[arg(long, value_enum, default_value_t = AveragingArg::Log)]
    averaging: AveragingArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupingArg {
    /// Average the phrases of each guidance mode into one row.
    Average,
    /// Keep each mode:phrase method separate.
    PerPhrase,
}

#[derive(Clone, Copy, ValueEnum)]
enum AveragingArg {
    /// Average in log space, then exponentiate.
    Log,
    /// Exponentiate per record, then average.
    Prob,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding metrics.csv / intervals.csv.
    #[arg(long, default_value = "runs/latest")]
    dir: PathBuf,
}

#[derive(Args)]
struct MockServeArgs {
    /// JSON script of request matchers and canned replies.
    #[arg(long)]
    script: PathBuf,
    /// Listen address.
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
}

#[derive(Args)]
struct FixtureArgs {
    /// Directory that receives images/ and manifest.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of real-labeled records.
    #[arg(long, default_value_t = 8)]
    real: usize,
    /// AI generator group as name=count; repeatable.
    #[arg(long = "generator", value_name = "NAME=COUNT", value_parser = parse_group)]
    generators: Vec<(String, usize)>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SampleArgs {
    /// Input manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Output manifest path.
    #[arg(long)]
    out: PathBuf,
    /// Number of records to keep.
    #[arg(short = 'n', long)]
    num: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stratify quotas by this record field.
    #[arg(long, value_enum)]
    stratify: Option<StratifyArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StratifyArg {
    Generator,
    Label,
    Dataset,
}

fn parse_group(raw: &str) -> Result<(String, usize), String> {
    let (name, count) = raw
        .split_once('=')
        .ok_or_else(|| format!("{raw:?} is not NAME=COUNT"))?;
    if name.is_empty() {
        return Err("generator name must not be empty".into());
    }
    let count: usize = count.parse().map_err(|e| format!("bad count in {raw:?}: {e}"))?;
    Ok((name.to_string(), count))
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn dispatch(cli: Cli) -> Result<(), CmdError> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Probe(args) => probe(args),
        Command::Report(args) => {
            let written = cmd_report(&args.dir)?;
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::MockServe(args) => mock_serve(args),
        Command::Fixture(args) => fixture(args),
        Command::Sample(args) => sample(args),
        Command::Phrases => {
            phrases();
            Ok(())
        }
    }
}

fn run(args: RunArgs) -> Result<(), CmdError> {
    let config = RunConfig {
        manifest_path: args.manifest,
        backend: args.backend.to_config(),
        guidance: args.guidance.parse()?,
        temperature: args.temperature,
        max_tokens: args.max_tokens,
        seed: args.seed,
        out_dir: args.out_dir,
        bootstrap_iterations: args.bootstrap_iters,
        bootstrap_level: args.bootstrap_level,
        target_method: args.target_method,
    };
    let summary = cmd_run(&config)?;
    println!("dataset: {}", summary.dataset);
    for m in &summary.methods {
        println!(
            "{:<24} macro F1 {:.4} [{:.4}, {:.4}]  unparsed {:.4}  (scored {}, failed {})",
            m.method_id, m.macro_f1, m.ci_low, m.ci_high, m.unparsed_rate, m.scored, m.failed
        );
    }
    if let Some(imp) = &summary.improvement {
        println!("{}", format_improvement(imp));
    }
    println!("results in {}", summary.out_dir.display());
    Ok(())
}

fn probe(args: ProbeArgs) -> Result<(), CmdError> {
    let config = ProbeConfig {
        manifest_path: args.manifest,
        backend: args.backend.to_config(),
        guidance: args.guidance.parse()?,
        temperature: args.temperature,
        max_tokens: args.max_tokens,
        seed: args.seed,
        out_dir: args.out_dir,
        grouping: match args.grouping {
            GroupingArg::Average => PhraseGrouping::AverageAcrossPhrases,
            GroupingArg::PerPhrase => PhraseGrouping::PerPhrase,
        },
        averaging: match args.averaging {
            AveragingArg::Log => ConfidenceAveraging::LogSpace,
            AveragingArg::Prob => ConfidenceAveraging::ProbSpace,
        },
    };
    let summary = cmd_probe(&config)?;
    for row in &summary.rows {
        println!(
            "{:<24} fraction {:.2}  confidence {:.4}  macro F1 {:.4}  (n={})",
            row.method, row.fraction, row.normalized_confidence, row.macro_f1, row.n
        );
    }
    println!("results in {}", summary.out_dir.display());
    Ok(())
}

fn mock_serve(args: MockServeArgs) -> Result<(), CmdError> {
    let text = std::fs::read_to_string(&args.script)
        .map_err(|e| CmdError::Config(format!("{}: {e}", args.script.display())))?;
    let script = MockScript::from_json(&text)
        .map_err(|e| CmdError::Config(format!("{}: {e}", args.script.display())))?;
    let server = MockServer::start_on(script, &args.addr)
        .map_err(|e| CmdError::Config(format!("bind {}: {e}", args.addr)))?;
    println!("mock backend listening on {}", server.url());
    println!("press Ctrl-C to stop");
    loop {
        std::thread::park();
    }
}

fn fixture(args: FixtureArgs) -> Result<(), CmdError> {
    let mut groups: Vec<(&str, usize)> = Vec::new();
    if args.real > 0 {
        groups.push(("real", args.real));
    }
    for (name, count) in &args.generators {
        groups.push((name.as_str(), *count));
    }
    if groups.is_empty() {
        return Err(CmdError::Config("fixture needs --real > 0 or at least one --generator".into()));
    }
    let manifest = synth_fixture(&args.out_dir, &groups, args.seed)
        .map_err(|e| CmdError::Config(format!("{}: {e}", args.out_dir.display())))?;
    println!(
        "wrote {} records to {}",
        manifest.records.len(),
        args.out_dir.join("manifest.jsonl").display()
    );
    Ok(())
}

fn sample(args: SampleArgs) -> Result<(), CmdError> {
    let manifest = Manifest::load(&args.manifest)
        .map_err(|e| CmdError::Config(format!("{}: {e}", args.manifest.display())))?;
    let stratify = args.stratify.map(|s| match s {
        StratifyArg::Generator => StratifyField::Generator,
        StratifyArg::Label => StratifyField::Label,
        StratifyArg::Dataset => StratifyField::Dataset,
    });
    let records = sample_split(&manifest.records, args.num, args.seed, stratify);
    let kept = records.len();
    let sampled = Manifest { header: manifest.header, records };
    sampled
        .save(&args.out)
        .map_err(|e| CmdError::Config(format!("{}: {e}", args.out.display())))?;
    println!("kept {kept} of {} records in {}", manifest.records.len(), args.out.display());
    Ok(())
}

fn phrases() {
    println!("guidance phrases (kind/id):");
    for (kind, id, text) in catalog_entries() {
        println!("  {kind}/{id}: {text:?}");
    }
    println!();
    println!("question: {DETECTION_QUESTION:?}");
    println!("final-answer elicitation: {FINAL_ANSWER_ELICITATION:?}");
    println!("probe elicitation: {PROBE_ELICITATION:?}");
    println!();
    println!("method spec grammar: baseline | prefill:<id> | pseudo-prefill:<id> | prompt:cot|s2");
}
