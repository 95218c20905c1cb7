//! `spca`: synthesize data, fit and tune estimators, run the benchmark.
//!
//! Exit codes: 0 success, 2 invalid input, 3 I/O or unreadable file,
//! 4 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spca::SpcaError;

#[derive(Parser, Debug)]
#[command(name = "spca", version, about = "Sparse principal subspace estimation")]
pub struct Cli {
    /// Seed for data generation (synth, bench) or fold assignment (fit, tune).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// JSON file with the command's configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log progress and solver warnings.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a synthetic data set and write its population model.
    Synth(SynthArgs),
    /// Fit one estimator to a data CSV.
    Fit(FitArgs),
    /// Cross-validate lambda for one estimator.
    Tune(FitArgs),
    /// Run the Monte-Carlo benchmark.
    Bench(BenchArgs),
    /// Score an estimate against a population model.
    Eval(EvalArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyArg {
    Mcp,
    Scad,
    L1,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetArg>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Write a `x0,x1,...` header line.
    #[arg(long)]
    pub header: bool,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Data CSV, one observation per row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Independent sample to score CV folds on instead of splitting `--data`.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Population model JSON; supplies the support for the oracle.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub estimator: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Choose lambda by cross-validation.
    #[arg(long)]
    pub tune: bool,
    #[arg(long, value_enum)]
    pub penalty: Option<FamilyArg>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Explicit lambda grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetArg>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma-separated estimator names.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    /// Use `c * default_lambda` instead of cross-validation.
    #[arg(long, conflicts_with = "lambda")]
    pub lambda_scale: Option<f64>,
    /// Use a fixed lambda instead of cross-validation.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Estimate JSON written by `fit`, or a matrix CSV.
    #[arg(long)]
    pub estimate: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<SpcaError>() {
        Some(SpcaError::Numerical(_)) => 4,
        Some(SpcaError::Io(_)) | Some(SpcaError::Parse(_)) => 3,
        Some(_) => 2,
        None if err.downcast_ref::<std::io::Error>().is_some() => 3,
        None => 2,
    }
}

/// The error chain, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    let mut prev = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !prev.ends_with(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
        prev = text;
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = if cli.verbose {
        "info"
    } else {
        "warn,spca::solver=error,spca::tuning=error"
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(filter)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
