//! `speechground` command-line interface.

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use speechground::ErrorKind;

const EXIT_VALIDATION: u8 = 3;
const EXIT_TRAINING: u8 = 4;
const EXIT_IO: u8 = 5;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<speechground::Error>() {
            return match e.kind() {
                ErrorKind::Validation => EXIT_VALIDATION,
                ErrorKind::Training => EXIT_TRAINING,
                ErrorKind::Io => EXIT_IO,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::TuneThreshold(a) => commands::tune_threshold_cmd(&a),
        Command::Roc(a) => commands::roc(&a),
        Command::UserStudy(a) => commands::user_study(&a),
        Command::GroupStudy(a) => commands::group_study(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
