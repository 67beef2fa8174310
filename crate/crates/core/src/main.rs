use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    barlowwalk::cli::run(barlowwalk::cli::Cli::parse())
}
