//! `pselab`: simulate cohorts, serve sessions, analyze logs, sample curves
//! and replay sessions.
//!
//! Exit status is 0 on success, 1 on runtime failure (including replay
//! diffs) and 2 on invalid flags or configuration.

mod analyze;
mod curves;
mod replay;
mod run;
mod serve;
mod simulate;

use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use run::CliError;

#[derive(Debug, Parser)]
#[command(name = "pselab", version, about = "Progress-bar PSE measurement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a cohort of observers and write PSE tables.
    Simulate(simulate::SimulateArgs),
    /// Run the HTTP session service.
    Serve(serve::ServeArgs),
    /// Analyze a directory of session logs.
    Analyze(analyze::AnalyzeArgs),
    /// Sample the progress curves as CSV.
    Curves(curves::CurvesArgs),
    /// Recompute PSEs from session logs and report disagreements.
    Replay(replay::ReplayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Serve(_) => "serve",
            Command::Analyze(_) => "analyze",
            Command::Curves(_) => "curves",
            Command::Replay(_) => "replay",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let result = match cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Serve(a) => serve::run(a),
        Command::Analyze(a) => analyze::run(a),
        Command::Curves(a) => curves::run(a),
        Command::Replay(a) => replay::run(a),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            let mut cmd = Cli::command();
            cmd.build();
            let sub = cmd.find_subcommand_mut(name).expect("parsed subcommand exists");
            sub.error(clap::error::ErrorKind::InvalidValue, msg).exit()
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
