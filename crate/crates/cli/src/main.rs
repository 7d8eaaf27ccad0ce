use std::process::ExitCode;

use clap::Parser;
use orbe_cli::args::{Cli, Command};
use orbe_cli::commands;
use orbe_core::Error;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NotConverged { .. } => 2,
        Error::Numeric(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Exit 2 is reserved for non-convergence.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::Orbe(a) => commands::orbe(a),
        Command::GenGridworld(a) => commands::gen_gridworld_cmd(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
