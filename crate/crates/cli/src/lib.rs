//! `wildcensus` command line: plan, ingest, eval, sweep, census, serve,
//! report and synth.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 on I/O
//! errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

mod commands;
pub mod server;

pub const RUN_SCHEMA: &str = "wildcensus-run/1";

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "wildcensus",
    version,
    about = "UAV strip-transect wildlife census toolkit"
)]
pub struct Cli {
    /// Worker threads for per-image work (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Lay out, select and route survey transects.
    Plan(PlanArgs),
    /// Validate a manifest and its record streams; optionally split, export
    /// training data and register review tasks.
    Ingest(IngestArgs),
    /// Score detections against labels.
    Eval(EvalArgs),
    /// Confidence-threshold sweep only.
    Sweep(EvalArgs),
    /// Reconcile verdicts, deduplicate and estimate density.
    Census(CensusArgs),
    /// Run the review HTTP service.
    Serve(ServeArgs),
    /// Render CSV/SVG from a report.json.
    Report(ReportArgs),
    /// Generate a synthetic survey.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PlanArgs {
    /// Study area as a GeoJSON Polygon (lon/lat).
    #[arg(long, conflicts_with = "rect")]
    pub area: Option<PathBuf>,
    /// Rectangular study area WIDTHxHEIGHT in meters, centred on --origin.
    #[arg(long, value_name = "WxH")]
    pub rect: Option<String>,
    /// Geodetic origin LAT,LON for --rect.
    #[arg(long, value_name = "LAT,LON", allow_hyphen_values = true)]
    pub origin: Option<String>,
    #[arg(long, default_value_t = 0.10)]
    pub coverage: f64,
    /// Cell size NSxEW in meters.
    #[arg(long, default_value = "1500x100")]
    pub grid: String,
    /// Grid rotation, degrees clockwise from north.
    #[arg(long, default_value_t = 0.0)]
    pub orientation: f64,
    #[arg(long, default_value_t = 760.0)]
    pub min_transect: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 67.5)]
    pub swath: f64,
    #[arg(long, default_value_t = 9000.0)]
    pub max_route: f64,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Camera registry (TOML); built-in models are always available.
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Write train/val/test splits with the published category counts.
    #[arg(long, requires = "labels")]
    pub splits: bool,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Export the training split as normalized polygon annotations.
    #[arg(long, requires = "splits")]
    pub export: Option<PathBuf>,
    /// Review store to register tasks in.
    #[arg(long, env = "WILDCENSUS_STORE")]
    pub store: Option<PathBuf>,
    /// Create review tasks in --store, with detections at or above --tau as
    /// candidates.
    #[arg(long)]
    pub tasks: bool,
    #[arg(long, default_value_t = 0.26)]
    pub tau: f64,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    #[arg(long, default_value_t = 0.10)]
    pub iou: f64,
    /// Sweep grid spacing over [0, 1].
    #[arg(long, default_value_t = 0.005)]
    pub grid_step: f64,
    /// Classes averaged into mAP.
    #[arg(long, value_delimiter = ',', default_value = "deer")]
    pub classes: Vec<String>,
    /// Restrict evaluation to the images of a split (splits.json + name).
    #[arg(long, requires = "split")]
    pub splits: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// Also write SVG plots.
    #[arg(long)]
    pub svg: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CensusArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    /// Verdict stream (JSONL). Without it, reviews come from --store.
    #[arg(long)]
    pub verdicts: Option<PathBuf>,
    #[arg(long, env = "WILDCENSUS_STORE")]
    pub store: Option<PathBuf>,
    /// Same-individual radius, meters.
    #[arg(long, default_value_t = 20.0)]
    pub radius: f64,
    /// Same-individual time window, seconds.
    #[arg(long, default_value_t = 10800.0)]
    pub window: f64,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    #[arg(long, env = "WILDCENSUS_STORE")]
    pub store: Option<PathBuf>,
    /// Lease time-to-live, seconds.
    #[arg(long, default_value_t = 900.0)]
    pub lease_ttl: f64,
    /// Manifest used to resolve image files.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    /// Directory image paths in the manifest are relative to (default: the
    /// manifest's directory).
    #[arg(long)]
    pub images_root: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// report.json written by `eval`.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub svg: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Scenario spec (JSON); omitted fields take defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Start from the ~40,000-image scenario instead of the small default.
    #[arg(long)]
    pub large: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub deer: Option<usize>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// I/O anywhere in the cause chain makes it an I/O failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err
        .chain()
        .any(|e| e.downcast_ref::<std::io::Error>().is_some())
    {
        2
    } else {
        1
    }
}

/// Cause chain joined with `: `, skipping causes already quoted by their
/// parent.
pub fn describe(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !parts.last().is_some_and(|p| p.ends_with(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

/// Output directory: explicit, else the store, else the working directory.
pub(crate) fn out_dir(out: &Option<PathBuf>, fallback: &str) -> PathBuf {
    match out {
        Some(p) => p.clone(),
        None => match std::env::var_os("WILDCENSUS_STORE") {
            Some(s) => Path::new(&s).join(fallback),
            None => PathBuf::from(fallback),
        },
    }
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .try_init();
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(error) => {
            eprintln!("error: {}", describe(&error));
            exit_code(&error)
        }
    }
}
