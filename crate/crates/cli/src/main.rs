//! `surfglm`: batch front end for surface-based task-fMRI GLMs.

mod commands;
mod error;
mod fitdir;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "surfglm", version, about = "Spatial Bayesian and classical GLMs for task fMRI on surface meshes")]
struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log verbosity: repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a JSON specification.
    Simulate(commands::simulate::Args),
    /// Fit the classical or spatial Bayesian GLM to one subject.
    Fit(commands::fit::Args),
    /// Threshold a fit into activation maps.
    Activate(commands::activate::Args),
    /// Combine subject fits into a group fit.
    Group(commands::group::Args),
    /// Test-retest metrics between two visits.
    Reliability(commands::reliability::Args),
    /// Edge-length distortion between two embeddings of one mesh.
    Distort(commands::distort::Args),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result: Result<(), CliError> = match cli.command {
        Command::Simulate(a) => commands::simulate::run(a),
        Command::Fit(a) => commands::fit::run(a),
        Command::Activate(a) => commands::activate::run(a),
        Command::Group(a) => commands::group::run(a),
        Command::Reliability(a) => commands::reliability::run(a),
        Command::Distort(a) => commands::distort::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
