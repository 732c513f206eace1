use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    densegen_cli::run(densegen_cli::Cli::parse()).into()
}
