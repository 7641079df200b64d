use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

/// Invalid or missing arguments; exits with code 2.
#[derive(Debug)]
pub struct BadArgs(pub String);

impl std::fmt::Display for BadArgs {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BadArgs {}

/// A check or validation that ran and failed; exits with code 1.
#[derive(Debug)]
pub struct Failed(pub String);

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Failed {}

#[derive(Parser, Debug)]
#[command(name = "deautoconv", version, about = "Regularized deautoconvolution: source certificates, solves and rate experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Grid resolution (samples per unit length).
    #[arg(long = "N", global = true)]
    pub resolution: Option<usize>,
    /// Seed (master seed for experiments).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// key=value configuration file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for independent solves (0 = automatic).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a source certificate from a source element.
    ConstructSource(commands::ConstructSourceArgs),
    /// Solve one Tikhonov problem.
    Solve(commands::SolveArgs),
    /// Run a noise-level sweep and write per-run records plus fitted rates.
    Experiment(commands::ExperimentArgs),
    /// Run the built-in invariant suites.
    Verify(commands::VerifyArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<BadArgs>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
