mod analyze;
mod config;
mod enhance;
mod error;
mod manifest;
mod score;
mod synth;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Single- and multi-channel speech dereverberation in the fan-chirp domain.
#[derive(Debug, Parser)]
#[command(name = "fanchirp", version = fanchirp_core::VERSION)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    Enhance(enhance::EnhanceArgs),
    Analyze(analyze::AnalyzeArgs),
    Score(score::ScoreArgs),
    Synth(synth::SynthArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Enhance(a) => enhance::run(a),
        Command::Analyze(a) => analyze::run(a),
        Command::Score(a) => score::run(a),
        Command::Synth(a) => synth::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
