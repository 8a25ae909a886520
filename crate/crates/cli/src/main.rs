//! `fastfm` command-line front end.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fastfm::FmError;

#[derive(Debug, Parser)]
#[command(
    name = "fastfm",
    version,
    about = "Factorization machines: fit, predict and benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on a libsvm file.
    Fit(FitArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Time fits over a list of ranks.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    /// Regression
    R,
    /// Binary classification, labels -1/+1
    C,
    /// Pairwise ranking (sgd only)
    Rank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Als,
    Mcmc,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchSolverArg {
    Als,
    Mcmc,
}

/// Model hyperparameters shared by `fit` and `benchmark`.
#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 8)]
    pub rank: usize,
    #[arg(long, default_value_t = 100)]
    pub n_iter: usize,
    #[arg(long, default_value_t = 0.1)]
    pub init_std: f64,
    /// Penalty for both w and V unless overridden.
    #[arg(long, default_value_t = 0.0)]
    pub l2_reg: f64,
    #[arg(long)]
    pub l2_reg_w: Option<f64>,
    #[arg(long = "l2-reg-V", alias = "l2-reg-v")]
    pub l2_reg_v: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub step_size: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Do not fit the global bias w0.
    #[arg(long)]
    pub no_intercept: bool,
    /// Feature indices in the input files start at 1.
    #[arg(long)]
    pub one_based: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum, default_value = "r")]
    pub task: TaskArg,
    #[arg(long, value_enum, default_value = "als")]
    pub solver: SolverArg,
    #[arg(long)]
    pub train: PathBuf,
    /// Rows to predict; required for mcmc.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// `winner_row,loser_row` CSV over training rows (rank task).
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[arg(long)]
    pub pred_out: Option<PathBuf>,
    /// Hyperparameter traces as CSV (mcmc).
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Model file to start from.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub pred_out: PathBuf,
    /// Emit Phi(y_hat) instead of the raw score.
    #[arg(long)]
    pub proba: bool,
    /// Ignore features the model does not know instead of failing.
    #[arg(long)]
    pub clip_features: bool,
    #[arg(long)]
    pub one_based: bool,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Rows predicted by mcmc every iteration; defaults to none.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub solver: BenchSolverArg,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    pub ranks: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

/// Errors with their process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Input { path: String, source: FmError },
    #[error(transparent)]
    Fm(#[from] FmError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        let fm = match self {
            CliError::Usage(_) => return 2,
            CliError::Input { source, .. } => source,
            CliError::Fm(e) => e,
        };
        match fm {
            FmError::Io(_) => 2,
            FmError::Divergence(_) => 4,
            _ => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => commands::fit(&args),
        Command::Predict(args) => commands::predict_cmd(&args),
        Command::Benchmark(args) => commands::benchmark(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
