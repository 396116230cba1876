mod cli;
mod commands;
mod settings;

use std::fmt;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use cli::Cli;

/// Bad flags or configuration. Exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

/// A numerical check failed. Exit code 3.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for NumericalFailure {}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    use grouplift::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Argument(_) | E::Generation(_) => EXIT_USAGE,
                E::Numeric(_) | E::Divergence { .. } | E::NonFiniteGradient { .. } => EXIT_NUMERIC,
                _ => EXIT_DATA,
            };
        }
        if cause.is::<UsageError>() || cause.is::<toml::de::Error>() {
            return EXIT_USAGE;
        }
        if cause.is::<NumericalFailure>() {
            return EXIT_NUMERIC;
        }
    }
    EXIT_DATA
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
