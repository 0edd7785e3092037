mod args;
mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::Cli;

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Runtime(_) => "runtime",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<protscape::Error> for CliError {
    fn from(e: protscape::Error) -> Self {
        match e {
            protscape::Error::Argument(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn fail(e: &CliError) -> ExitCode {
    let msg = e.message().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    eprintln!("error kind={} message=\"{msg}\"", e.kind());
    ExitCode::from(e.code())
}

fn main() -> ExitCode {
    let argv: Vec<_> = std::env::args_os().collect();
    let command = Cli::command();
    let argv = match config::merge_config(&command, argv) {
        Ok(a) => a,
        Err(m) => return fail(&CliError::Usage(m)),
    };
    let matches = match command.try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return fail(&CliError::Usage(first.to_string()));
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => return fail(&CliError::Usage(e.to_string())),
    };
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    match commands::run(cli.cmd, sub) {
        Ok(code) => code,
        Err(e) => fail(&e),
    }
}
