mod args;
mod commands;
mod report;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::{EXIT_OK, EXIT_USAGE};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let (result, format) = match &cli.command {
        Command::Inspect(a) => (commands::inspect(a), a.report),
        Command::Compress(a) => (commands::compress(a), a.input.report),
        Command::Reconstruct(a) => (commands::reconstruct(a), a.input.report),
        Command::Verify(a) => (commands::verify(a), a.input.report),
    };
    match result {
        Ok(outcome) => {
            let (out, err) = report::render(&outcome.records, format);
            print!("{out}");
            eprint!("{err}");
            let _ = std::io::stdout().flush();
            ExitCode::from(outcome.code)
        }
        Err(fatal) => {
            eprintln!("error: {}", fatal.message);
            ExitCode::from(fatal.code)
        }
    }
}
