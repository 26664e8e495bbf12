//! `hetpar` command-line driver.

mod bench;
mod datagen;
mod inspect;
mod run_args;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hetpar::checkpoint::CheckpointError;
use hetpar::config::ConfigError;
use hetpar::data::DataError;
use hetpar::engine::EngineError;

/// Exit status for usage and configuration errors.
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 1;

#[derive(Parser)]
#[command(name = "hetpar", version, about = "Data-parallel training with deterministic batching and checkpoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as shard files.
    Datagen(datagen::DatagenArgs),
    /// Train a model, in-process or as one rank of a TCP world.
    Train(train::TrainArgs),
    /// Run equal total work at several world sizes and tabulate scaling.
    Bench(bench::BenchArgs),
    /// Describe a shard or checkpoint file.
    Inspect(inspect::InspectArgs),
}

/// A bad invocation, reported with exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<ConfigError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<EngineError>() {
            if matches!(e, EngineError::Config(_)) {
                return EXIT_USAGE;
            }
        }
        if let Some(e) = cause.downcast_ref::<DataError>() {
            if matches!(e, DataError::Format(_) | DataError::Config(_)) {
                return EXIT_USAGE;
            }
        }
        if let Some(e) = cause.downcast_ref::<CheckpointError>() {
            if matches!(e, CheckpointError::Format(_)) {
                return EXIT_USAGE;
            }
        }
    }
    EXIT_RUNTIME
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HETPAR_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Datagen(a) => datagen::run(a),
        Command::Train(a) => train::run(a),
        Command::Bench(a) => bench::run(a),
        Command::Inspect(a) => inspect::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
