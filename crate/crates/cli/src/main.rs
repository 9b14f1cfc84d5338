//! `gcad`: train the causality-based detector and score series from the shell.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gcad::{GcadError, Result};

use commands::{EvalArgs, ScoreArgs, SynthArgs};
use config::RunArgs;

#[derive(Debug, Parser)]
#[command(name = "gcad", version, about)]
struct Cli {
    /// Worker threads for causality extraction.
    #[arg(long, global = true, env = "GCAD_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic VAR benchmark with labelled anomalies.
    Synth(SynthArgs),
    /// Train the predictor on normal data.
    Train(RunArgs),
    /// Sample the normal causality pattern.
    Pattern(RunArgs),
    /// Score a test series against the normal pattern.
    Score(ScoreArgs),
    /// AUROC and AUPRC of a score file.
    Eval(EvalArgs),
}

fn run(cli: Cli) -> Result<()> {
    if cli.workers == Some(0) {
        return Err(GcadError::Config("--workers must be at least 1".into()));
    }
    match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Pattern(a) => commands::pattern(a, cli.workers),
        Command::Score(a) => commands::score(a, cli.workers),
        Command::Eval(a) => commands::eval(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(if e.is_runtime() { 3 } else { 2 })
        }
    }
}
