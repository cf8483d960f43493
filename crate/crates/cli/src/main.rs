#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod config;
mod error;
mod io;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::CliResult;

fn run(cli: &Cli) -> CliResult<()> {
    commands::configure_threads(cli.threads)?;
    match &cli.command {
        Command::Calibrate(a) => commands::calibrate_cmd(a),
        Command::Loss(a) => commands::loss_cmd(a),
        Command::Simulate(a) => commands::simulate_cmd(a),
        Command::Compare(a) => commands::compare_cmd(a),
        Command::ReturnDensity(a) => commands::return_density_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
