//! `harchow` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
//! failure, 4 I/O failure.

mod args;
mod commands;
mod data;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Lib(harchow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 4,
            CliError::Lib(e) if e.is_validation() => 2,
            CliError::Lib(harchow::Error::Io(_) | harchow::Error::CacheFormat(_)) => 4,
            CliError::Lib(_) => 3,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "Usage",
            CliError::Io(_) => "Io",
            CliError::Lib(e) => e.name(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<harchow::Error> for CliError {
    fn from(e: harchow::Error) -> Self {
        CliError::Lib(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let res = match &cli.command {
        Command::Test(a) => commands::test(a),
        Command::SimulateCv(a) => commands::simulate_cv(a),
        Command::McSize(a) => commands::mc_size(a),
        Command::McPower(a) => commands::mc_power(a),
        Command::SimulateData(a) => commands::simulate_data(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.name());
            ExitCode::from(e.exit_code())
        }
    }
}
