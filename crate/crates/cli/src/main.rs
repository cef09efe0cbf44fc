//! Command-line front end for the diffractive-network quantization toolkit.

mod commands;
mod config;
mod datasets;
mod manifest;
mod outputs;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

use diffract_qat::error::Error;

#[derive(Debug, Parser)]
#[command(
    name = "diffract-qat",
    version,
    about = "Train, evaluate, and export diffractive optical networks with quantized phase masks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the two-stage training protocol (full precision, then
    /// quantization-aware) and write a run directory.
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint on a dataset and write diagnostic tables.
    Eval(commands::eval::EvalArgs),
    /// Merge several run summaries into one comparison table.
    Compare(commands::compare::CompareArgs),
    /// Export phase maps or a simulated detector field from a checkpoint.
    Export(commands::export::ExportArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Compare(args) => commands::compare::run(args),
        Command::Export(args) => commands::export::run(args),
        Command::Gradcheck(args) => commands::gradcheck::run(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
