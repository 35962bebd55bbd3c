//! `logicloss`: generate data, compile rules, train and evaluate.
//!
//! Exit codes: 0 on success, 1 on numerical failure (non-finite loss or a
//! replay that does not reproduce), 2 on usage and IO errors.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use logicloss::autodiff::AutodiffError;
use logicloss::classifier::ClassifierError;
use logicloss::data::DataError;
use logicloss::logic::LogicError;
use logicloss::metrics::MetricsError;
use logicloss::tnorm::{CompileError, TNorm};
use logicloss::trainer::{ActiveSets, ConfigError, TrainError};

#[derive(Debug, Parser)]
#[command(name = "logicloss", version, about = "Logic-driven consistency losses for NLI-style classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic interval-world dataset bundle.
    Gen(GenArgs),
    /// Print the loss each rule compiles to.
    Compile(CompileArgs),
    /// Train a classifier and write its checkpoint and training log.
    Train(TrainArgs),
    /// Report violations, coverage and cross tables for a checkpoint.
    Eval(EvalArgs),
    /// Re-run a recorded command and check that its outputs are identical.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 5000)]
    pub train: usize,
    #[arg(long, default_value_t = 1000)]
    pub dev: usize,
    #[arg(long, default_value_t = 1000)]
    pub test: usize,
    #[arg(long, default_value_t = 1000)]
    pub unlabeled: usize,
    #[arg(long, default_value_t = 1000)]
    pub eval: usize,
    /// Standard deviation of the feature noise.
    #[arg(long, default_value_t = 0.25)]
    pub sigma: f64,
    /// Pair feature dimension; each sentence gets half (even, at least 4).
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 40)]
    pub topics: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    /// Rule file; the shipped NLI rules when omitted.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long, default_value = "product", value_parser = parse_tnorm)]
    pub tnorm: TNorm,
    /// Also print each rule's computation graph.
    #[arg(long)]
    pub dump: bool,
    /// Directory to write `compile.txt` and a manifest into.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// INI configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset bundle directory written by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Constraint datasets to use: `none` or a subset such as `M,U,T`.
    #[arg(long, value_parser = parse_active)]
    pub constraints: Option<ActiveSets>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// T-norm used for the coverage report.
    #[arg(long, default_value = "product", value_parser = parse_tnorm)]
    pub tnorm: TNorm,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Where to write the new outputs; must differ from the recorded run.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_tnorm(s: &str) -> Result<TNorm, String> {
    s.parse()
}

fn parse_active(s: &str) -> Result<ActiveSets, String> {
    s.parse()
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Rules {
        path: PathBuf,
        #[source]
        source: LogicError,
    },
    #[error("{path}: {source}")]
    Config {
        path: PathBuf,
        #[source]
        source: ConfigError,
    },
    #[error("{path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: ClassifierError,
    },
    #[error("{path}: invalid manifest: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("replay differs from the recorded run in: {}", .0.join(", "))]
    NotReproduced(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        let numeric = |e: &AutodiffError| matches!(e, AutodiffError::NonFinite { .. });
        match self {
            CliError::Train(TrainError::NonFinite { .. }) | CliError::NotReproduced(_) => 1,
            CliError::Train(TrainError::Autodiff(e)) => {
                if numeric(e) {
                    1
                } else {
                    2
                }
            }
            CliError::Compile(CompileError::Autodiff(e)) if numeric(e) => 1,
            _ => 2,
        }
    }
}

pub fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Run one parsed command. `argv` excludes the program name and is recorded
/// in the manifest as given.
pub fn run(cli: Cli, argv: &[String]) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => commands::gen(&a, argv),
        Command::Compile(a) => commands::compile_cmd(&a, argv),
        Command::Train(a) => commands::train(&a, argv),
        Command::Eval(a) => commands::eval(&a, argv),
        Command::Replay(a) => commands::replay(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LOGICLOSS_LOG", "warn")).init();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
