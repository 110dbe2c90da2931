mod args;
mod commands;
mod config;
mod csvio;
mod error;
mod svg;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn run(cli: &Cli) -> error::CliResult<()> {
    match &cli.command {
        Command::Generate(a) => commands::generate_cmd(&cli.common, a),
        Command::Train(a) => commands::train_cmd(&cli.common, a),
        Command::Detect(a) => commands::detect_cmd(&cli.common, a),
        Command::Evaluate(a) => commands::evaluate_cmd(&cli.common, a),
        Command::Report(a) => commands::report_cmd(&cli.common, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
