//! Command-line front end: dataset synthesis, training, streaming
//! enhancement, evaluation, and loss-weight sweeps.

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use streamgain::Error;

mod config;
mod dataset;
mod enhance;
mod eval;
mod mix;
mod sweep;
mod train;

#[derive(Parser, Debug)]
#[command(name = "streamgain", version, about = "streaming speech enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// synthesize a noisy/clean/noise dataset from a clip manifest
    Mix(mix::MixArgs),
    /// train a gain model and write checkpoints
    Train(train::TrainArgs),
    /// run a checkpoint over a wav file as a stream
    Enhance(enhance::EnhanceArgs),
    /// score systems on a mixed dataset
    Eval(eval::EvalArgs),
    /// train one model per loss coefficient and plot quality against it
    Sweep(sweep::SweepArgs),
}

/// 1 is for bad invocations, 3 for numeric blowups mid-run, 2 for everything
/// else (missing or malformed data, io).
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap renders help on stdout and errors on stderr
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Mix(args) => mix::run(args),
        Command::Train(args) => train::run(args),
        Command::Enhance(args) => enhance::run(args),
        Command::Eval(args) => eval::run(args),
        Command::Sweep(args) => sweep::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
