use std::process::ExitCode;

use clap::Parser;
use latentgnn_cli::{exit_code, run, Cli};

fn main() -> ExitCode {
    exit_code(run(Cli::parse()))
}
