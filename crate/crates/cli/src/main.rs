//! `rfmark`: receptive-field-aware image watermarking from the command line.

mod args;
mod commands;
mod settings;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::{Cli, Command};

/// Exit statuses.
const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Missing or contradictory arguments.
    Usage(String),
    Core(rfmark_core::Error),
}

impl From<rfmark_core::Error> for CliError {
    fn from(e: rfmark_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_data_error() => EXIT_DATA,
            CliError::Core(_) => EXIT_RUNTIME,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Rf(a) => commands::rf(a),
        Command::GenWatermarks(a) => commands::gen_watermarks(a),
        Command::Ingest(a) => commands::ingest(a),
        Command::Train(a) => commands::train(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Embed(a) => commands::embed(a),
        Command::Detect(a) => commands::detect(a),
        Command::Attack(a) => commands::attack(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
