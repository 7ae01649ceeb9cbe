//! `selbias`: compare models, run corrected forward searches and replay
//! simulation experiments from the command line.

mod commands;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CompareArgs, ForwardArgs, SimulateArgs};

#[derive(Debug, Parser)]
#[command(
    name = "selbias",
    version,
    about = "Selection-induced bias diagnostics for LOO-CV model selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare many models against a baseline.
    Compare(CompareArgs),
    /// Forward search with per-step bias correction.
    Forward(ForwardArgs),
    /// Run a simulation experiment from a config file.
    Simulate(SimulateArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Compare(a) => commands::run_compare(a),
        Command::Forward(a) => commands::run_forward(a),
        Command::Simulate(a) => commands::run_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
