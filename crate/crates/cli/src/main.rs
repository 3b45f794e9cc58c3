//! `ndpoly`: discover, inspect and export normalized-difference polynomial indices.

mod args;
mod commands;
mod output;

use std::io::{self, Write};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ColorChoice, CommandFactory, FromArgMatches};

use args::Cli;
use commands::Outcome;

fn no_color() -> bool {
    std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty())
}

fn main() -> ExitCode {
    let mut command = Cli::command();
    if no_color() {
        command = command.color(ColorChoice::Never);
    }
    let cli = match command
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(Outcome::VALIDATION),
            };
        }
    };

    match commands::run(cli) {
        Ok(outcome) => {
            let mut stdout = io::stdout().lock();
            if !outcome.summary.is_empty() {
                let _ = stdout.write_all(outcome.summary.as_bytes());
                if !outcome.summary.ends_with('\n') {
                    let _ = stdout.write_all(b"\n");
                }
            }
            for path in &outcome.artifacts {
                eprintln!("wrote {}", path.display());
            }
            ExitCode::from(outcome.code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() {
                Outcome::VALIDATION
            } else {
                Outcome::RUNTIME
            })
        }
    }
}
