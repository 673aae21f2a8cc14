//! Command implementations behind the `latentgnn` binary.
//!
//! Every command writes UTF-8 CSV: a `#` comment line with the command, its
//! configuration and the version, a header row, then data rows. The CSV goes
//! to `--out` when given and to stdout otherwise; human-readable summaries go
//! to stdout in the first case and to stderr in the second.
//!
//! Exit codes: 0 success, 1 verification or runtime failure, 2 usage error.

pub mod args;
pub mod bench;
pub mod flops;
pub mod report;
pub mod train;
pub mod verify;

use std::process::ExitCode;

pub use args::{Cli, Command};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] latentgnn::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Lib(latentgnn::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Runs one command; `Ok(false)` means a verification check failed.
pub fn run(cli: Cli) -> CliResult<bool> {
    match cli.command {
        Command::Verify(a) => verify::cmd_verify(&a),
        Command::Bench(a) => bench::cmd_bench(&a).map(|_| true),
        Command::Flops(a) => flops::cmd_flops(&a).map(|_| true),
        Command::Train(a) => train::cmd_train(&a).map(|_| true),
    }
}

pub fn exit_code(result: CliResult<bool>) -> ExitCode {
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
