//! `armpose` command-line entry point.
//!
//! Exit codes: 0 success, 1 runtime failure (one JSON line on stderr),
//! 2 usage error.

mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};

fn init_logging(verbose: u8, command: &Command) {
    let base = match command {
        Command::Serve(_) | Command::Emulate(_) | Command::Bench(_) => 1,
        _ => 0,
    };
    let level = match base + verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_millis()
        .target(env_logger::Target::Stderr)
        .init();
}

fn parse(argv: Vec<String>) -> Result<Cli, clap::Error> {
    let argv = config::merge(Cli::command(), argv)?;
    let matches = Cli::command().try_get_matches_from(argv)?;
    Cli::from_arg_matches(&matches)
}

fn main() -> ExitCode {
    let cli = match parse(std::env::args().collect()) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    init_logging(cli.verbose, &cli.command);
    let name = cli.command.name();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("{}", serde_json::json!({ "error": msg, "command": name }));
            ExitCode::from(1)
        }
    }
}
