//! Command-line entry point.
//!
//! Every flag can also come from an environment variable named
//! `TSCEPTION_<FLAG>` (upper case, dashes → underscores), e.g.
//! `TSCEPTION_EPOCHS=100`. Flags win over the environment, which wins over
//! a `--config` file, which wins over built-in defaults.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;

mod commands;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "tsception", version, about = "EEG emotion classification with TSception")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset from a key = value spec file.
    Synth(SynthArgs),
    /// Baseline removal, resampling, band-pass, re-referencing, channel order.
    Preprocess(PreprocessArgs),
    /// Trial-wise 10-fold cross-validation per subject.
    Cv10(RunArgs),
    /// Leave-one-trial-out cross-validation per subject.
    Loto(RunArgs),
    /// Full model vs an ablated variant, side by side.
    Ablate(AblateArgs),
    /// Channel saliency maps of a trained checkpoint.
    Saliency(SaliencyArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[arg(long, env = "TSCEPTION_SPEC")]
    pub spec: PathBuf,
    #[arg(long, env = "TSCEPTION_OUT")]
    pub out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long, env = "TSCEPTION_SEED")]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct PreprocessArgs {
    #[arg(long, env = "TSCEPTION_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "TSCEPTION_OUT")]
    pub out: PathBuf,
    /// key = value overrides of the preprocessing defaults.
    #[arg(long, env = "TSCEPTION_CONFIG")]
    pub config: Option<PathBuf>,
    /// Montage preset name or `generic:<pairs>`.
    #[arg(long, env = "TSCEPTION_MONTAGE")]
    pub montage: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long, env = "TSCEPTION_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "TSCEPTION_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "TSCEPTION_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "TSCEPTION_EPOCHS")]
    pub epochs: Option<usize>,
    #[arg(long, env = "TSCEPTION_BATCH")]
    pub batch: Option<usize>,
    #[arg(long, env = "TSCEPTION_LR")]
    pub lr: Option<f64>,
    #[arg(long, env = "TSCEPTION_DIMENSION", value_parser = ["arousal", "valence"])]
    pub dimension: Option<String>,
    /// Ratings above this are "high".
    #[arg(long, env = "TSCEPTION_THRESHOLD")]
    pub threshold: Option<f64>,
    #[arg(long, env = "TSCEPTION_SEGMENT_SECONDS")]
    pub segment_seconds: Option<f64>,
    /// key = value file with model, training and run settings.
    #[arg(long, env = "TSCEPTION_CONFIG")]
    pub config: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Never changes results.
    #[arg(long, env = "TSCEPTION_WORKERS", default_value_t = 0)]
    pub workers: usize,
}

#[derive(Args, Debug, Clone, Copy, Default)]
pub struct AblationFlags {
    #[arg(long, env = "TSCEPTION_DROP_TEMPORAL")]
    pub drop_temporal: bool,
    #[arg(long, env = "TSCEPTION_DROP_SPATIAL")]
    pub drop_spatial: bool,
    #[arg(long, env = "TSCEPTION_DROP_FUSION")]
    pub drop_fusion: bool,
    #[arg(long, env = "TSCEPTION_ZERO_HEMISPHERE")]
    pub zero_hemisphere: bool,
    #[arg(long, env = "TSCEPTION_ZERO_GLOBAL")]
    pub zero_global: bool,
}

#[derive(Args, Debug, Clone)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, env = "TSCEPTION_PROTOCOL", value_parser = ["cv10", "loto"], default_value = "cv10")]
    pub protocol: String,
    #[command(flatten)]
    pub ablation: AblationFlags,
}

#[derive(Args, Debug, Clone)]
pub struct SaliencyArgs {
    #[arg(long, env = "TSCEPTION_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long, env = "TSCEPTION_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "TSCEPTION_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "TSCEPTION_DIMENSION", value_parser = ["arousal", "valence"], default_value = "arousal")]
    pub dimension: String,
    #[arg(long, env = "TSCEPTION_THRESHOLD", default_value_t = 5.0)]
    pub threshold: f64,
    /// Only explain segments with this label.
    #[arg(long, env = "TSCEPTION_CLASS")]
    pub class: Option<usize>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Shape(_)
        | Error::InvalidArgument(_)
        | Error::BadMagic { .. }
        | Error::UnsupportedVersion(_)
        | Error::Truncated(_)
        | Error::Format(_)
        | Error::Leakage { .. }
        | Error::Io(_) => EXIT_DATA,
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Diagnostics go to stderr; the return value is the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
