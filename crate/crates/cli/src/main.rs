//! `flps` command-line interface.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad input: exit code 1.
    Validation(String),
    /// Failure while running: exit code 2.
    Runtime(String),
}

impl From<flps::Error> for CliError {
    fn from(e: flps::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "flps",
    version,
    about = "Fully latent principal stratification: simulate, fit and evaluate"
)]
pub struct Cli {
    /// Worker threads (0 uses every core). Results do not depend on it.
    #[arg(long, global = true, env = "FLPS_WORKERS")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic trial: dataset CSV, truth JSON and a model config.
    Simulate(SimulateArgs),
    /// Fit the joint model to a dataset and write draws and summaries.
    Fit(FitArgs),
    /// Run a replication study from a design JSON.
    Study(StudyArgs),
    /// Compare the sampler with the quadrature reference on a small trial.
    OracleCheck(OracleCheckArgs),
    /// Summarize a draws CSV.
    Summarize(SummarizeArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// rasch, 2pl, gpcm or grm.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub j: Option<usize>,
    /// Categories per polytomous item.
    #[arg(long)]
    pub categories: Option<usize>,
    #[arg(long)]
    pub missing_fraction: Option<f64>,
    /// fixed_count or bernoulli.
    #[arg(long)]
    pub missing_mode: Option<String>,
    #[arg(long, env = "FLPS_SEED")]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model JSON (kind, categories, constraint, prior, sampler).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub categories: Option<usize>,
    /// fix_first_item or none.
    #[arg(long)]
    pub constraint: Option<String>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iter: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long, env = "FLPS_SEED")]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StudyArgs {
    #[arg(long)]
    pub design: PathBuf,
    /// Overrides the design's master seed.
    #[arg(long, env = "FLPS_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Suppress per-replication progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct OracleCheckArgs {
    /// Check JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub j: Option<usize>,
    #[arg(long, env = "FLPS_SEED")]
    pub seed: Option<u64>,
    /// Sampler iterations per chain.
    #[arg(long)]
    pub iter: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Retained reference-chain iterations.
    #[arg(long)]
    pub oracle_iter: Option<usize>,
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Run directory for the report and manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub draws: PathBuf,
    /// Summary CSV to write; the table is printed either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
