//! `fairrank`: data generation, training, sweeps, baselines and evaluation.

mod baseline;
mod eval;
mod generate;
mod output;
mod settings;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "fairrank",
    version,
    about = "Fair learning to rank with Plackett-Luce policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a dataset with its group sidecar and manifest
    #[command(subcommand)]
    Generate(generate::GenerateKind),
    /// Train one model
    Train(train::TrainArgs),
    /// Train one model per (lambda, seed)
    Sweep(train::SweepArgs),
    /// Run a comparison method over a lambda grid
    #[command(subcommand)]
    Baseline(baseline::BaselineKind),
    /// Evaluate a checkpoint on a dataset
    Eval(eval::EvalArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(k) => generate::run(k),
        Command::Train(a) => train::run_train(a),
        Command::Sweep(a) => train::run_sweep(a),
        Command::Baseline(k) => baseline::run(k),
        Command::Eval(a) => eval::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
