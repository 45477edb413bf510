//! `ida` command line: argument definitions, dispatch and exit codes.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 missing input file,
//! 4 malformed input file, 1 anything else. Errors are reported as one line on stderr.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ida_core::dao::{CalibrationConfig, ScoreMode};
use ida_core::index::DEFAULT_EXCLUDE_THRESHOLD;
use ida_core::Error;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_FORMAT: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "ida", version, about = "Context-calibrated verification scores for unit-norm embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset from a preset.
    Gen(GenArgs),
    /// Build the k-means sidecar for an anchor store.
    BuildDb(BuildDbArgs),
    /// Score a pair list with cosine and calibrated scores.
    Calibrate(CalibrateArgs),
    /// Train the density regression head against anchor-search densities.
    TrainSsr(TrainSsrArgs),
    /// TAR@FAR, ROC, histogram and overlap for a score table.
    Eval(EvalArgs),
    /// Rank-k identification against a distractor set.
    Identify(IdentifyArgs),
    /// Evaluate the calibrated score over one swept parameter.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(next_help_heading = "Calibration")]
struct CalibrationArgs {
    /// Support set size.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Temperature.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Log)]
    score_mode: ModeArg,
    /// Anchors at least this similar to the query count as the query itself.
    #[arg(long, default_value_t = DEFAULT_EXCLUDE_THRESHOLD, allow_negative_numbers = true)]
    exclude_threshold: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Raw,
    Log,
}

impl CalibrationArgs {
    fn config(&self) -> Result<CalibrationConfig, Error> {
        let cfg = CalibrationConfig {
            k: self.k,
            tau: self.tau,
            score_mode: match self.score_mode {
                ModeArg::Raw => ScoreMode::Raw,
                ModeArg::Log => ScoreMode::Log,
            },
            exclude_threshold: self.exclude_threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Serialize)]
struct GenArgs {
    /// Builtin preset name or path to a preset file.
    #[arg(long, default_value = "fig2")]
    preset: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct BuildDbArgs {
    #[arg(long)]
    anchor_db: PathBuf,
    /// Cluster count; defaults to ceil(sqrt(rows)).
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sidecar output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct CalibrateArgs {
    #[arg(long)]
    probe_db: PathBuf,
    /// Defaults to the probe store.
    #[arg(long)]
    gallery_db: Option<PathBuf>,
    #[arg(long)]
    pairs: PathBuf,
    /// Anchor store for search-based densities.
    #[arg(long, required_unless_present = "model", conflicts_with = "model")]
    anchor_db: Option<PathBuf>,
    /// Sidecar from `build-db`; without it the partition is rebuilt in memory.
    #[arg(long, requires = "anchor_db")]
    index: Option<PathBuf>,
    /// Scan every anchor instead of using the partition.
    #[arg(long, conflicts_with = "index")]
    exhaustive: bool,
    /// SSR model for learned densities.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    calibration: CalibrationArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum TargetArg {
    Linear,
    Log,
}

#[derive(Args, Debug, Serialize)]
struct TrainSsrArgs {
    #[arg(long)]
    train_db: PathBuf,
    #[arg(long)]
    anchor_db: PathBuf,
    #[arg(long, default_value_t = 6000)]
    steps: usize,
    #[arg(long, default_value_t = 0.02)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = ida_core::ssr::DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, value_enum, default_value_t = TargetArg::Log)]
    target_space: TargetArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional CSV of per-step minibatch loss.
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    calibration: CalibrationArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
enum SplitArg {
    GenuineImpostor,
    Domain,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum ColumnArg {
    Cosine,
    Calibrated,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, value_enum, default_value_t = ColumnArg::Calibrated)]
    column: ColumnArg,
    /// Comma-separated FAR targets.
    #[arg(long, value_delimiter = ',', default_values_t = [1e-3, 1e-4])]
    far: Vec<f64>,
    #[arg(long, default_value_t = ida_core::eval::DEFAULT_BINS)]
    bins: usize,
    /// Histogram range; defaults to the span of the scores.
    #[arg(long, requires = "max", allow_negative_numbers = true)]
    min: Option<f64>,
    #[arg(long, requires = "min", allow_negative_numbers = true)]
    max: Option<f64>,
    #[arg(long, value_enum, default_value_t = SplitArg::GenuineImpostor)]
    split_by: SplitArg,
    /// `index,domain` CSV written by `gen`; needed for `--split-by domain`.
    #[arg(long, required_if_eq("split_by", "domain"))]
    domains: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct IdentifyArgs {
    /// Labeled store; the first two samples of each label become probe and mate.
    #[arg(long)]
    probe_db: PathBuf,
    #[arg(long)]
    distractor_db: PathBuf,
    /// Use a seeded subsample of this many distractors.
    #[arg(long)]
    distractors: Option<usize>,
    #[arg(long, required_unless_present = "model", conflicts_with = "model")]
    anchor_db: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 10])]
    ranks: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON output path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    calibration: CalibrationArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
enum ParamArg {
    K,
    Tau,
    #[value(name = "anchor_size", alias = "anchor-size")]
    AnchorSize,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    #[arg(long, value_enum)]
    param: ParamArg,
    /// Comma-separated values, written back verbatim in the `value` column.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    #[arg(long)]
    probe_db: PathBuf,
    #[arg(long)]
    gallery_db: Option<PathBuf>,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    anchor_db: PathBuf,
    #[arg(long, default_value_t = ida_core::eval::DEFAULT_BINS)]
    bins: usize,
    /// Seeds the anchor subsampling of an `anchor_size` sweep.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Base configuration; the swept parameter overrides its field.
    #[command(flatten)]
    calibration: CalibrationArgs,
}

/// Parse, run, and map the outcome to an exit code.
pub fn run(args: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprint!("{e}");
                return EXIT_USAGE;
            }
            eprintln!("{}", one_line_clap(&e.to_string()));
            return EXIT_USAGE;
        }
    };
    let result = match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::BuildDb(a) => commands::build_db(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::TrainSsr(a) => commands::train_ssr(a),
        Command::Eval(a) => commands::eval(a),
        Command::Identify(a) => commands::identify(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let (code, msg) = describe(&e);
            eprintln!("error: {}", msg.replace('\n', " "));
            code
        }
    }
}

/// Clap's message up to the usage block, folded onto one line.
fn one_line_clap(text: &str) -> String {
    text.lines()
        .take_while(|l| !l.starts_with("Usage:"))
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("tip:") && !l.starts_with("For more information"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn describe(e: &Error) -> (i32, String) {
    let mut root = e;
    while let Error::Query { source, .. } = root {
        root = source;
    }
    let code = match root {
        Error::InvalidParameter { .. } => EXIT_USAGE,
        Error::NotFound(_) => EXIT_MISSING,
        r if r.is_format_error() => EXIT_FORMAT,
        _ => EXIT_FAILURE,
    };
    let msg = match root {
        Error::InvalidParameter { name, reason } => format!("invalid value for --{name}: {reason}"),
        _ => e.to_string(),
    };
    (code, msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clap_definitions_are_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn clap_errors_fold_to_one_line() {
        let text = "error: the following required arguments were not provided:\n  --out <OUT>\n\nUsage: ida gen --out <OUT>\n\nFor more information, try '--help'.\n";
        assert_eq!(
            one_line_clap(text),
            "error: the following required arguments were not provided: --out <OUT>"
        );
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(describe(&Error::NotFound("x".into())).0, EXIT_MISSING);
        assert_eq!(describe(&Error::EmptyIndex).0, EXIT_FAILURE);
        let inner = Error::Truncated {
            what: "embedding store",
            expected: 17,
            found: 3,
        };
        let wrapped = Error::Query {
            index: 0,
            source: Box::new(inner),
        };
        assert_eq!(describe(&wrapped).0, EXIT_FORMAT);
        let (code, msg) = describe(&Error::InvalidParameter {
            name: "k",
            reason: "must be at least 1".into(),
        });
        assert_eq!(code, EXIT_USAGE);
        assert!(msg.contains("--k"));
    }
}
