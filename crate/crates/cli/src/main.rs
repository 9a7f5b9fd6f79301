//! `tlstm` command-line tool.
//!
//! Exit codes: 0 success, 1 bad configuration or input, 2 training
//! diverged (non-finite loss or gradient), 3 gradient check above
//! tolerance.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tlstm::model::{Norm, Variant};

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_DIVERGED: u8 = 2;
pub const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Diverged(String),
    CheckFailed(String),
}

impl CliError {
    pub fn config(e: impl fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Diverged(_) => EXIT_DIVERGED,
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Diverged(m) | CliError::CheckFailed(m) => f.write_str(m),
        }
    }
}

impl From<tlstm::Error> for CliError {
    fn from(e: tlstm::Error) -> Self {
        match e {
            tlstm::Error::Divergence { .. } | tlstm::Error::NonFiniteGradient { .. } => {
                CliError::Diverged(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "tlstm", version, about = "Tensorized LSTM training and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from a run configuration.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the validation or test split.
    Eval(EvalArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Time forward+backward passes and count steps for several depths.
    Bench(BenchArgs),
    /// Export the diagonal memory-cell trace of one example as CSV.
    Trace(TraceArgs),
    /// Print the resolved configuration of a preset.
    Preset(PresetArgs),
}

/// A config file, a preset name, or both (the file then overrides the preset).
#[derive(Args, Debug)]
pub struct ConfigSource {
    /// Run configuration (JSON).
    pub config: Option<PathBuf>,
    /// Named preset used when no file is given, or as the file's base.
    #[arg(long)]
    pub preset: Option<String>,
    /// Replaces the configured output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: ConfigSource,
    /// Continue from `<out_dir>/checkpoint.bin` instead of starting over.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum Split {
    Validation,
    Test,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: ConfigSource,
    /// Defaults to `<out_dir>/checkpoint.bin`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// `D`, tensor dimensionality.
    #[arg(long, default_value_t = 2)]
    pub dims: usize,
    /// `P`.
    #[arg(long, default_value_t = 2)]
    pub tensor_size: usize,
    /// `M`.
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    /// `K`.
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,
    /// `L`, accepted only as a consistency check.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long, default_value = "tlstm", value_parser = parse_variant)]
    pub variant: Variant,
    #[arg(long, default_value = "none", value_parser = parse_norm)]
    pub norm: Norm,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `T`; defaults to `L + 1`.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub input_size: usize,
    #[arg(long, default_value_t = 4)]
    pub output_size: usize,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Preset whose task supplies the batches.
    #[arg(long, default_value = "addition-desk")]
    pub task: String,
    /// Comma-separated depths `L`.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    pub depths: Vec<usize>,
    #[arg(long, default_value = "tlstm", value_parser = parse_variant)]
    pub variant: Variant,
    #[arg(long, default_value_t = 2)]
    pub dims: usize,
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,
    /// Channel normalization makes the count depend on `P`; off by default.
    #[arg(long, default_value = "none", value_parser = parse_norm)]
    pub norm: Norm,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Timed forward+backward passes per depth.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Emit JSON lines instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct TraceArgs {
    #[command(flatten)]
    pub source: ConfigSource,
    /// Defaults to `<out_dir>/checkpoint.bin`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Seed of the data stream the example is drawn from.
    #[arg(long, default_value_t = 0)]
    pub example_seed: u64,
    /// Print the CSV instead of writing `<out_dir>/trace.csv`.
    #[arg(long)]
    pub stdout: bool,
}

#[derive(Args, Debug)]
pub struct PresetArgs {
    /// Preset name; lists all presets when omitted.
    pub name: Option<String>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: tlstm::Error| e.to_string())
}

fn parse_norm(s: &str) -> Result<Norm, String> {
    s.parse().map_err(|e: tlstm::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Trace(a) => commands::trace(&a),
        Command::Preset(a) => commands::preset(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
