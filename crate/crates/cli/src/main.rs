mod commands;
mod manifest;

use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "dmmcs", version, about = "Tag-guided caption decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn per-tag expression statistics from the training split
    BuildStats(commands::BuildStatsArgs),
    /// Decode captions for tag sets
    Decode(commands::DecodeArgs),
    /// Sweep alpha on a validation split
    TuneAlpha(commands::TuneAlphaArgs),
    /// Score decoded captions against references
    Evaluate(commands::EvaluateArgs),
    /// Reassign train/val/test splits
    Split(commands::SplitArgs),
    /// Train the n-gram language model
    TrainLm(commands::TrainLmArgs),
    /// Generate a synthetic corpus with matching embeddings
    GenSynth(commands::GenSynthArgs),
    /// Print per-tag statistics quartiles
    Report(commands::ReportArgs),
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildStats(a) => commands::build_stats(&a),
        Command::Decode(a) => commands::decode(&a),
        Command::TuneAlpha(a) => commands::tune_alpha(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Split(a) => commands::split(&a),
        Command::TrainLm(a) => commands::train_lm(&a),
        Command::GenSynth(a) => commands::gen_synth(&a),
        Command::Report(a) => commands::report(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DMMCS_LOG", "warn"))
        .format_timestamp(None)
        .init();

    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
