//! `porkcast`: batch entry points for ingesting prices, analysing markets,
//! building datasets, tuning, training, evaluating and forecasting, plus the
//! commands that run the forecasting service.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use porkcast_core::domain::LagScenario;
use porkcast_core::families::{all_families, family_by_key, family_keys, Forecaster, NeuralScale};
use porkcast_service::ServiceConfig;
use thiserror::Error;

mod commands;
pub mod data;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Data(_) => EXIT_DATA,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "porkcast", version, about = "Weekly pork price forecasting")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Service configuration file (JSON)
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Directory of price CSV files, with an optional calendar.json
    #[arg(long, global = true, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Random seed [default: 7]
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output file; for reports, the stem of the .txt and .json pair
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Worker threads for model fitting [default: all cores]
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,
}

impl GlobalArgs {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }
}

pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read, validate and repair price data, then report the aligned panel
    Ingest(IngestArgs),
    /// Market correlations, market selection and unit-root tests
    Analyze,
    /// Build the windowed dataset for one scenario and audit it for leakage
    BuildDataset(DatasetArgs),
    /// Random hyperparameter search for one model on the validation weeks
    Tune(TuneArgs),
    /// Fit one model on all data and write it as JSON
    Train(TrainArgs),
    /// Compare models under the data-lag scenarios on the test weeks
    Evaluate(EvaluateArgs),
    /// Forecast the target market's next week
    Forecast(ForecastArgs),
    /// Run the forecasting service and its HTTP API until interrupted
    Serve(ServeArgs),
    /// Run one fetch-train-forecast cycle of the service
    Cycle(StoreArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Write repairs and gap fills as newline-delimited JSON
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// public, public:<weeks> or subscription [default: from config]
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Option<LagScenario>,
    /// Weeks of history per market
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..))]
    pub window: u32,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Model family key
    #[arg(long, value_parser = parse_family)]
    pub model: String,
    /// public, public:<weeks> or subscription [default: from config]
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Option<LagScenario>,
    /// Random-search trials
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u32).range(1..))]
    pub trials: u32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Model family key
    #[arg(long, value_parser = parse_family)]
    pub model: String,
    /// public, public:<weeks> or subscription [default: from config]
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Option<LagScenario>,
    /// Hyperparameters as JSON, or the output of `tune` [default: reference values]
    #[arg(long, value_name = "PATH")]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// public, subscription or both (public:<weeks> also accepted)
    #[arg(long, default_value = "both", value_parser = parse_scenarios)]
    pub scenario: Scenarios,
    /// Fixed window for every model, or `sweep` for 2..12 [default: tuned]
    #[arg(long, value_parser = parse_window)]
    pub window: Option<WindowArg>,
    /// Comma-separated model keys, or `all`
    #[arg(long, default_value = "all", value_parser = parse_models)]
    pub models: Models,
    /// Random-search trials per model and scenario; 0 uses reference hyperparameters
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    /// Refit before every test week
    #[arg(long)]
    pub walk_forward: bool,
    /// Also store the report for the service API
    #[arg(long)]
    pub publish: bool,
    /// Service data directory for --publish [default: from config]
    #[arg(long, value_name = "DIR")]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    /// Trained model from `train` [default: fit the configured champion]
    #[arg(long, value_name = "PATH")]
    pub model_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StoreArgs {
    /// Service data directory [default: from config]
    #[arg(long, value_name = "DIR")]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    /// Listen address [default: from config]
    #[arg(long, value_name = "ADDR")]
    pub listen: Option<String>,
    /// Seconds between checks whether the weekly cycle is due; 0 disables the timer
    #[arg(long, default_value_t = 60)]
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenarios(pub Vec<LagScenario>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowArg {
    Fixed(usize),
    Sweep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Models(pub Vec<String>);

impl Models {
    pub fn families(&self) -> Vec<Box<dyn Forecaster>> {
        all_families(NeuralScale::Desk).into_iter().filter(|f| self.0.iter().any(|k| k == f.key())).collect()
    }
}

fn parse_scenario(s: &str) -> Result<LagScenario, String> {
    s.parse().map_err(|e: porkcast_core::domain::DomainError| e.to_string())
}

fn parse_scenarios(s: &str) -> Result<Scenarios, String> {
    match s {
        "both" => Ok(Scenarios(vec![LagScenario::public(), LagScenario::subscription()])),
        _ => parse_scenario(s).map(|sc| Scenarios(vec![sc])),
    }
}

fn parse_window(s: &str) -> Result<WindowArg, String> {
    if s == "sweep" {
        return Ok(WindowArg::Sweep);
    }
    match s.parse::<usize>() {
        Ok(w) if w >= 1 => Ok(WindowArg::Fixed(w)),
        _ => Err(format!("expected a positive number of weeks or `sweep`, got {s:?}")),
    }
}

fn parse_family(s: &str) -> Result<String, String> {
    match family_by_key(s, NeuralScale::Desk) {
        Some(f) => Ok(f.key().to_string()),
        None => Err(format!("unknown model {s:?}; known: {}", family_keys().join(", "))),
    }
}

fn parse_models(s: &str) -> Result<Models, String> {
    if s == "all" {
        return Ok(Models(family_keys().into_iter().map(String::from).collect()));
    }
    let mut out: Vec<String> = Vec::new();
    for k in s.split(',').map(str::trim) {
        let key = parse_family(k)?;
        if !out.contains(&key) {
            out.push(key);
        }
    }
    if out.is_empty() {
        return Err("no models given".into());
    }
    Ok(Models(out))
}

/// The service configuration with the command-line overrides applied.
pub fn resolve_config(g: &GlobalArgs) -> Result<ServiceConfig, CliError> {
    let mut cfg = match &g.config {
        Some(p) => ServiceConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => ServiceConfig::default(),
    };
    if let Some(dir) = &g.data {
        data::apply_data_dir(&mut cfg, dir)?;
    }
    if let Some(s) = g.seed {
        cfg.champion.seed = s;
    }
    Ok(cfg)
}

/// `stem.txt` and `stem.json` for a report written to `out`.
pub fn report_paths(out: &Path) -> (PathBuf, PathBuf) {
    let stem = match out.extension().and_then(|e| e.to_str()) {
        Some("txt" | "json") => out.with_extension(""),
        _ => out.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".txt"), with(".json"))
}

/// Parses `args` (program name first) and runs the command, writing
/// results to `out` and diagnostics to `err`.
pub fn run_with<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let result = match cli.global.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n as usize).build() {
            Ok(pool) => pool.install(|| commands::dispatch(&cli, out, err)),
            Err(e) => Err(CliError::Runtime(e.to_string())),
        },
        None => commands::dispatch(&cli, out, err),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Runs with the process's stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    // unlocked handles, so service threads can log while a command runs
    let code = run_with(args, &mut std::io::stdout(), &mut std::io::stderr());
    let _ = std::io::stdout().flush();
    code
}
