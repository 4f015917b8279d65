mod common;
mod eval;
mod gradcheck;
mod process;
mod simulate;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// NeuralKalman acoustic echo cancellation.
///
/// Exit status: 0 on success, 2 for configuration or input errors, 3 when
/// a filter diverges numerically, 1 for other failures.
#[derive(Parser)]
#[command(name = "nkaec", version)]
struct Cli {
    /// Seed overriding the one in the config file.
    #[arg(long, global = true, env = "NK_SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render echo scenes to WAV files with ground-truth sidecars.
    Simulate(simulate::Args),
    /// Run a canceller over a microphone/far-end WAV pair.
    Process(process::Args),
    /// Train a NeuralKalman variant on simulated scenes.
    Train(train::Args),
    /// Score a canceller on simulated scenes.
    Eval(eval::Args),
    /// Compare model gradients with finite differences.
    Gradcheck(gradcheck::Args),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate::run(a, cli.seed),
        Command::Process(a) => process::run(a, cli.seed),
        Command::Train(a) => train::run(a, cli.seed),
        Command::Eval(a) => eval::run(a, cli.seed),
        Command::Gradcheck(a) => gradcheck::run(a, cli.seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(common::exit_code(&e))
        }
    }
}
