//! `dcm`: rollup, classification, evaluation and triple mapping for plant
//! equipment records.

mod args;
mod commands;
mod output;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};

/// Failure of a subcommand after argument parsing.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

/// Wraps any library error as a data error.
pub fn data<E: fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&cli.out, a),
        Command::Ingest(a) => commands::ingest(&cli.out, a),
        Command::Rollup(a) => commands::rollup(&cli.out, a),
        Command::Train(a) => commands::train(&cli.out, a),
        Command::Eval(a) => commands::eval(&cli.out, a),
        Command::Sweep(a) => commands::sweep(&cli.out, a),
        Command::Classify(a) => commands::classify(&cli.out, a),
        Command::Map(a) => commands::map(&cli.out, a),
        Command::Query(a) => commands::query(&cli.out, a),
        Command::Serve(a) => commands::serve(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
