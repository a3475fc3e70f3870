//! `memaudit` command line.
//!
//! Exit codes: 0 success, 1 audit finished with flagged memorization,
//! 2 usage error, 3 I/O, format or data error.

mod commands;
pub mod progress;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use memaudit_core::correlate::EmbeddingMetric;
use memaudit_core::report::{ReportFormat, ThresholdRule};
use memaudit_core::{ChannelMask, ChannelMode, Error};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FLAGGED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ERROR: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "memaudit",
    version,
    about = "Audit synthetic images for memorized training data"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "MEMAUDIT_WORKERS", value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,

    /// Suppress progress lines.
    #[arg(long, global = true)]
    quiet: bool,

    #[arg(long, global = true, default_value = "warn",
          value_parser = ["off", "error", "warn", "info", "debug", "trace"])]
    log_level: String,

    /// Seconds between progress lines.
    #[arg(long, global = true, default_value_t = 2.0)]
    progress_interval: f64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Slice, filter, pad, rescale, remap and resize a dataset.
    Preprocess(PreprocessArgs),
    /// Top-k correlation audit of a synthetic set against the training set.
    Audit(AuditArgs),
    /// SSIM, mutual information, FID and Inception Score.
    Metrics(MetricsArgs),
    /// Build a synthetic set with planted copies of training images.
    Plant(PlantArgs),
    /// Rebuild a report from saved match lists.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// Input manifest.
    #[arg(long)]
    input: PathBuf,
    /// Output manifest.
    #[arg(long)]
    output: PathBuf,
    /// Container written next to the output manifest (default: same stem, `.ivc`).
    #[arg(long)]
    container: Option<PathBuf>,
    /// Slice filter: minimum fraction of bright pixels. Any filter flag enables filtering.
    #[arg(long)]
    min_fraction: Option<f64>,
    /// Slice filter: intensity a pixel must exceed.
    #[arg(long)]
    threshold: Option<f64>,
    /// Slice filter: channel inspected.
    #[arg(long)]
    filter_channel: Option<usize>,
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pad: Option<Vec<usize>>,
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    resize: Option<Vec<usize>>,
    /// Label mapping such as "1=51,2=102,4=204".
    #[arg(long)]
    remap: Option<String>,
    /// Annotation channel: skipped by --rescale, the only channel --remap touches.
    #[arg(long)]
    label_channel: Option<usize>,
    /// Per-channel min-max rescale to [0, 255].
    #[arg(long)]
    rescale: bool,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[arg(long)]
    train: PathBuf,
    /// Held-out set used as the baseline distribution.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    synthetic: PathBuf,
    /// Channels compared, e.g. "0-3" or "0,2" (default: all but the label channel of 5-channel data).
    #[arg(long)]
    channels: Option<ChannelMask>,
    #[arg(long, default_value = "concatenate")]
    channel_mode: ChannelMode,
    /// Similarity for embedding manifests.
    #[arg(long, default_value = "pearson")]
    metric: EmbeddingMetric,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// Synthetic images audited, drawn without replacement.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    sample: u64,
    /// Sampling seed; required when --sample is smaller than the synthetic set.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    block_budget_mib: u64,
    /// "percentile:P" of the baseline or "fixed:V".
    #[arg(long, default_value = "percentile:99.5")]
    rule: ThresholdRule,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    histogram_bins: u64,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
    /// Report path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory receiving the match lists as JSON.
    #[arg(long)]
    save_matches: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[arg(long, num_args = 2, value_names = ["QUERY", "REFERENCE"])]
    ssim_pairs: Option<Vec<PathBuf>>,
    #[arg(long, num_args = 2, value_names = ["QUERY", "REFERENCE"])]
    mi_pairs: Option<Vec<PathBuf>>,
    /// Pair each query with its top-1 reference from a saved match list
    /// instead of by position.
    #[arg(long)]
    matches: Option<PathBuf>,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(2..))]
    bins: u64,
    #[arg(long, num_args = 2, value_names = ["REAL", "SYNTH"])]
    fid: Option<Vec<PathBuf>>,
    /// Class-probability rows.
    #[arg(long = "is", value_name = "PROBS")]
    inception: Option<PathBuf>,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    splits: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlantArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 0.0)]
    p_copy: f64,
    #[arg(long, default_value_t = 0.0)]
    p_noisy: f64,
    #[arg(long, default_value_t = 0.0)]
    p_shift: f64,
    #[arg(long, default_value_t = 5.0)]
    sigma: f64,
    #[arg(long, default_value_t = 4)]
    shift: usize,
    #[arg(long)]
    seed: u64,
    /// Output container (IVC).
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth JSON.
    #[arg(long)]
    truth: PathBuf,
    /// Manifest for the planted set (default: container stem, `.mf`).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    matches: PathBuf,
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value = "percentile:99.5")]
    rule: ThresholdRule,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    histogram_bins: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

struct Context {
    workers: usize,
    quiet: bool,
    interval: Duration,
}

fn init_logging(level: &str, quiet: bool) {
    let level = match (quiet, level) {
        (true, "warn" | "info" | "debug" | "trace") => log::LevelFilter::Error,
        (_, l) => l.parse().unwrap_or(log::LevelFilter::Warn),
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .try_init();
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(&cli.log_level, cli.quiet);
    if !(cli.progress_interval >= 0.0 && cli.progress_interval.is_finite()) {
        eprintln!("error: --progress-interval must be a non-negative number of seconds");
        return EXIT_USAGE;
    }
    let ctx = Context {
        workers: cli.workers.unwrap_or(0) as usize,
        quiet: cli.quiet,
        interval: Duration::from_secs_f64(cli.progress_interval),
    };
    let outcome = match &cli.command {
        Command::Preprocess(a) => commands::preprocess(&ctx, a),
        Command::Audit(a) => commands::audit(&ctx, a),
        Command::Metrics(a) => commands::metrics(&ctx, a),
        Command::Plant(a) => commands::plant(&ctx, a),
        Command::Report(a) => commands::report(&ctx, a),
    };
    match outcome {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) => EXIT_USAGE,
                _ => EXIT_ERROR,
            }
        }
    }
}
