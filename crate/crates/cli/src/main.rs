//! `deepcs`: sample, reconstruct, train, evaluate and ablate block
//! compressive-sensing models from the command line.
//!
//! Exit codes: 0 success, 2 usage or invalid input, 3 I/O or file format,
//! 4 numerical failure.

mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::Cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid usage");
            eprintln!("deepcs: {}", line.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("deepcs: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

