mod args;
mod commands;
mod config;

use std::ffi::OsString;

use clap::Parser;

use crate::args::Cli;
use crate::config::CliError;

/// Exit codes: 0 success, 1 usage error, 2 numerical or pipeline error.
fn run(argv: impl IntoIterator<Item = OsString>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level.into()).init();
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("\nFor more information, try '--help'.");
            }
            e.exit_code()
        }
    }
}

fn main() {
    std::process::exit(run(std::env::args_os()));
}
