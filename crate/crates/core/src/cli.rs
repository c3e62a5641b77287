//! `fairhead` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 fixture check
//! failure. Every command that writes files also writes a run manifest next to
//! its output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::{self, PruneConfig, SweepMode, TrainConfig};
use crate::dataset::{self, ActivationDataset, SynthConfig};
use crate::error::{Error, Result};
use crate::fixture::{self, Fixture};
use crate::flip::{self, FlipConfig, GroupFeatureStats};
use crate::fsio;
use crate::harness::{self, EvaluateConfig, StatsSource};
use crate::head::{self, FinalLayer};
use crate::metrics;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_FIXTURE: i32 = 3;

pub const THREADS_ENV: &str = "FAIRHEAD_THREADS";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(
    name = "fairhead",
    version,
    about = "Fairness post-processing for binary classifier heads"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted group-dependent features.
    Synth(SynthArgs),
    /// Undersample every group to the size of the smallest one.
    Rebalance(RebalanceArgs),
    /// Score a head on a dataset.
    Metrics(MetricsArgs),
    /// Reweight a head's inputs by between-group variability.
    Flip(FlipArgs),
    /// Evaluate Fair-FLIP over a grid of alpha values.
    AlphaSweep(AlphaSweepArgs),
    /// Tune a global decision threshold for the fairness objective.
    Threshold(ThresholdArgs),
    /// Zero the most group-variable input features of a head.
    Prune(PruneArgs),
    /// Train a head on frozen activations with a fairness penalty.
    Retrain(RetrainArgs),
    /// k-fold comparison of all methods with a tabular report.
    Evaluate(EvaluateArgs),
    /// Check the headline claims against the published averages.
    FixtureCheck(FixtureArgs),
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    /// JSON synthetic configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct RebalanceArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct MetricsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    head: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Report JSON path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct FlipArgs {
    /// Group-annotated calibration data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    head: PathBuf,
    #[arg(long, default_value_t = flip::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct AlphaSweepArgs {
    /// Calibration data used for the variability statistics.
    #[arg(long)]
    data: PathBuf,
    /// Evaluation data; defaults to the calibration data.
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long)]
    head: PathBuf,
    /// Alpha grid spacing.
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[arg(long, default_value_t = 1.0)]
    max_alpha: f64,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ThresholdArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    head: PathBuf,
    #[arg(long, default_value_t = baselines::DEFAULT_STEP)]
    step: f64,
    /// Only pick thresholds where every parity is an actual min/max ratio.
    #[arg(long)]
    non_degenerate: bool,
    /// Trace CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct PruneArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    head: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize, Clone, Copy)]
struct TrainArgs {
    #[arg(long, default_value_t = TrainConfig::default().lambda)]
    lambda: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    l2: f64,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            seed,
            l2: self.l2,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct RetrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    head: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = flip::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    fraction: f64,
    #[arg(long, default_value_t = baselines::DEFAULT_STEP)]
    step: f64,
    /// Let the tuned threshold land on degenerate (near-constant) predictions.
    #[arg(long)]
    exhaustive_threshold: bool,
    /// Split that supplies the variability statistics: train, test or all.
    #[arg(long, value_enum, default_value = "train")]
    stats_from: StatsFrom,
    #[command(flatten)]
    train: TrainArgs,
    /// Output directory for report.json, report.md and manifest.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum StatsFrom {
    Train,
    Test,
    All,
}

#[derive(Debug, Args, Serialize)]
struct FixtureArgs {
    /// Alternative fixture JSON; the built-in table is used when omitted.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Directory to write the fixture's Markdown table into.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Provenance written next to every command output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Value,
    pub seeds: Vec<u64>,
    /// Input file path -> SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub tool_version: String,
    pub timestamp_unix: u64,
}

impl RunManifest {
    fn new<A: Serialize>(command: &str, args: &A, seeds: Vec<u64>) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            args: serde_json::to_value(args)?,
            seeds,
            inputs: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        })
    }

    fn with_file(mut self, path: &Path) -> Result<Self> {
        self.inputs.insert(path.display().to_string(), fsio::file_digest(path)?);
        Ok(self)
    }

    fn with_dataset(self, dir: &Path) -> Result<Self> {
        self.with_file(&dir.join(dataset::ACTIVATIONS_FILE))?
            .with_file(&dir.join(dataset::SAMPLES_FILE))
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        fsio::write_atomic(path, &json)
    }
}

/// `out.json` -> `out.<suffix>.json`, for side files of single-file outputs.
fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}.json"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fsio::create_dir_all(p),
        _ => Ok(()),
    }
}

fn load_pair(data: &Path, head_path: &Path) -> Result<(ActivationDataset, FinalLayer)> {
    let ds = dataset::load_dataset(data)?;
    let head = head::load_head(head_path)?;
    head.check_dim(ds.d(), "dataset feature count")?;
    Ok((ds, head))
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // Fails only if a global pool already exists, e.g. on a second
        // in-process call; the existing pool is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    configure_threads();
    match dispatch(cli.command, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                Error::InvalidArgument(_) | Error::InvalidConfig(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            }
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Rebalance(a) => cmd_rebalance(a, out),
        Command::Metrics(a) => cmd_metrics(a, out),
        Command::Flip(a) => cmd_flip(a, out),
        Command::AlphaSweep(a) => cmd_alpha_sweep(a, out),
        Command::Threshold(a) => cmd_threshold(a, out),
        Command::Prune(a) => cmd_prune(a, out),
        Command::Retrain(a) => cmd_retrain(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::FixtureCheck(a) => cmd_fixture_check(a, out),
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = match &a.config {
        Some(p) => {
            serde_json::from_slice::<SynthConfig>(&fsio::read(p)?).map_err(|e| Error::format(p, e.to_string()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let ds = dataset::synth_generate(&cfg)?;
    dataset::save_dataset(&ds, &a.out)?;
    dataset::save_synth_config(&cfg, &a.out)?;
    let mut manifest = RunManifest::new("synth", &a, vec![cfg.seed])?;
    if let Some(p) = &a.config {
        manifest = manifest.with_file(p)?;
    }
    manifest.write(&a.out.join(MANIFEST_FILE))?;
    writeln!(
        out,
        "wrote {} samples x {} features to {}",
        ds.n(),
        ds.d(),
        a.out.display()
    )
    .map_err(io_err)?;
    Ok(EXIT_OK)
}

fn cmd_rebalance(a: RebalanceArgs, out: &mut dyn Write) -> Result<i32> {
    let ds = dataset::load_dataset(&a.data)?;
    let balanced = dataset::undersample(&ds, a.seed)?;
    dataset::save_dataset(&balanced, &a.out)?;
    RunManifest::new("rebalance", &a, vec![a.seed])?
        .with_dataset(&a.data)?
        .write(&a.out.join(MANIFEST_FILE))?;
    writeln!(out, "kept {} of {} samples", balanced.n(), ds.n()).map_err(io_err)?;
    Ok(EXIT_OK)
}

fn cmd_metrics(a: MetricsArgs, out: &mut dyn Write) -> Result<i32> {
    let (ds, head) = load_pair(&a.data, &a.head)?;
    let report = metrics::build_report(&head, &ds, a.threshold, "metrics", None)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    match &a.out {
        Some(path) => {
            ensure_parent(path)?;
            fsio::write_atomic(path, json.as_bytes())?;
            RunManifest::new("metrics", &a, vec![])?
                .with_dataset(&a.data)?
                .with_file(&a.head)?
                .write(&sidecar(path, "manifest"))?;
            writeln!(
                out,
                "accuracy {:.4}  f1 {:.4}  tpp {:.4}  fpp {:.4}  ppv {:.4}  npv {:.4}  objective {:.4}",
                report.accuracy,
                report.f1,
                report.tpp_parity,
                report.fpp_parity,
                report.ppv_parity,
                report.npv_parity,
                report.objective
            )
            .map_err(io_err)?;
        }
        None => out.write_all(json.as_bytes()).map_err(io_err)?,
    }
    Ok(EXIT_OK)
}

fn cmd_flip(a: FlipArgs, out: &mut dyn Write) -> Result<i32> {
    let (ds, head) = load_pair(&a.data, &a.head)?;
    let stats = GroupFeatureStats::compute(&ds)?;
    let flipped = flip::apply_flip(&head, &stats, &FlipConfig::new(a.alpha)?)?;
    ensure_parent(&a.out)?;
    head::save_head(&flipped, &a.out)?;
    stats.save(&sidecar(&a.out, "stats"))?;
    RunManifest::new("flip", &a, vec![])?
        .with_dataset(&a.data)?
        .with_file(&a.head)?
        .write(&sidecar(&a.out, "manifest"))?;
    writeln!(out, "wrote {} (alpha {})", a.out.display(), a.alpha).map_err(io_err)?;
    Ok(EXIT_OK)
}

fn cmd_alpha_sweep(a: AlphaSweepArgs, out: &mut dyn Write) -> Result<i32> {
    let (calib, head) = load_pair(&a.data, &a.head)?;
    let eval = match &a.eval {
        Some(p) => dataset::load_dataset(p)?,
        None => calib.clone(),
    };
    let grid = flip::alpha_grid(a.step, a.max_alpha)?;
    let rows = flip::alpha_sweep(&head, &calib, &eval, &grid)?;
    ensure_parent(&a.out)?;
    fsio::write_atomic(&a.out, flip::sweep_to_csv(&rows).as_bytes())?;
    let mut manifest = RunManifest::new("alpha-sweep", &a, vec![])?
        .with_dataset(&a.data)?
        .with_file(&a.head)?;
    if let Some(p) = &a.eval {
        manifest = manifest.with_dataset(p)?;
    }
    manifest.write(&sidecar(&a.out, "manifest"))?;
    writeln!(out, "wrote {} rows to {}", rows.len(), a.out.display()).map_err(io_err)?;
    Ok(EXIT_OK)
}

fn cmd_threshold(a: ThresholdArgs, out: &mut dyn Write) -> Result<i32> {
    let (ds, head) = load_pair(&a.data, &a.head)?;
    let probs = head::forward(&head, &ds)?;
    let mode = if a.non_degenerate {
        SweepMode::NonDegenerate
    } else {
        SweepMode::Exhaustive
    };
    let sweep = baselines::threshold_sweep_with(&probs, ds.labels(), ds.groups(), a.step, mode)?;
    if let Some(path) = &a.out {
        ensure_parent(path)?;
        fsio::write_atomic(path, sweep.trace_csv().as_bytes())?;
        RunManifest::new("threshold", &a, vec![])?
            .with_dataset(&a.data)?
            .with_file(&a.head)?
            .write(&sidecar(path, "manifest"))?;
    }
    writeln!(
        out,
        "best_threshold {}\nbest_objective {}",
        sweep.best_threshold, sweep.best_objective
    )
    .map_err(io_err)?;
    Ok(EXIT_OK)
}

fn cmd_prune(a: PruneArgs, out: &mut dyn Write) -> Result<i32> {
    let (ds, head) = load_pair(&a.data, &a.head)?;
    let stats = GroupFeatureStats::compute(&ds)?;
    let pruned = baselines::bpfa_prune(&head, &stats, &PruneConfig::new(a.fraction)?)?;
    ensure_parent(&a.out)?;
    head::save_head(&pruned, &a.out)?;
    RunManifest::new("prune", &a, vec![])?
        .with_dataset(&a.data)?
        .with_file(&a.head)?
        .write(&sidecar(&a.out, "manifest"))?;
    writeln!(out, "wrote {}", a.out.display()).map_err(io_err)?;
    Ok(EXIT_OK)
}

fn cmd_retrain(a: RetrainArgs, out: &mut dyn Write) -> Result<i32> {
    let ds = dataset::load_dataset(&a.data)?;
    let trained = baselines::retrain_head(&ds, &a.train.config(a.seed))?;
    ensure_parent(&a.out)?;
    head::save_head(&trained, &a.out)?;
    RunManifest::new("retrain", &a, vec![a.seed])?
        .with_dataset(&a.data)?
        .write(&sidecar(&a.out, "manifest"))?;
    writeln!(out, "wrote {}", a.out.display()).map_err(io_err)?;
    Ok(EXIT_OK)
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<i32> {
    let (ds, head) = load_pair(&a.data, &a.head)?;
    let cfg = EvaluateConfig {
        folds: a.folds,
        seed: a.seed,
        alpha: a.alpha,
        fraction: a.fraction,
        step: a.step,
        sweep_mode: if a.exhaustive_threshold {
            SweepMode::Exhaustive
        } else {
            SweepMode::NonDegenerate
        },
        stats_source: match a.stats_from {
            StatsFrom::Train => StatsSource::Train,
            StatsFrom::Test => StatsSource::Test,
            StatsFrom::All => StatsSource::All,
        },
        train: a.train.config(a.seed),
    };
    let evaluation = harness::evaluate(&head, &ds, &cfg)?;
    fsio::create_dir_all(&a.out)?;
    fsio::write_atomic(&a.out.join("report.json"), evaluation.report_json()?.as_bytes())?;
    fsio::write_atomic(&a.out.join("report.md"), evaluation.report_markdown().as_bytes())?;
    RunManifest::new("evaluate", &a, vec![a.seed])?
        .with_dataset(&a.data)?
        .with_file(&a.head)?
        .write(&a.out.join(MANIFEST_FILE))?;
    for w in &evaluation.warnings {
        writeln!(out, "warning: {w}").map_err(io_err)?;
    }
    out.write_all(evaluation.report_markdown().as_bytes()).map_err(io_err)?;
    Ok(EXIT_OK)
}

fn cmd_fixture_check(a: FixtureArgs, out: &mut dyn Write) -> Result<i32> {
    let fx = match &a.fixture {
        Some(p) => {
            let text = String::from_utf8(fsio::read(p)?).map_err(|e| Error::format(p, e.to_string()))?;
            Fixture::parse(&text).map_err(|e| Error::format(p, e.to_string()))?
        }
        None => Fixture::builtin(),
    };
    let result = fixture::check(&fx)?;
    if let Some(dir) = &a.out {
        fsio::create_dir_all(dir)?;
        fsio::write_atomic(&dir.join("report.md"), fx.to_table().to_markdown().as_bytes())?;
        let mut manifest = RunManifest::new("fixture-check", &a, vec![])?;
        if let Some(p) = &a.fixture {
            manifest = manifest.with_file(p)?;
        }
        manifest.write(&dir.join(MANIFEST_FILE))?;
    }
    out.write_all(result.summary().as_bytes()).map_err(io_err)?;
    Ok(if result.passed() { EXIT_OK } else { EXIT_FIXTURE })
}
