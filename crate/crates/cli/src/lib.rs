//! `floeformer` command line: synthetic data, training, prediction, fusion,
//! evaluation and map rendering.

mod args;
mod commands;
mod config;
mod error;
mod manifest;

use std::ffi::OsString;

use clap::{CommandFactory, FromArgMatches};

pub use args::{Cli, Command};
pub use error::{CliError, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};

/// The full clap command tree, as used for parsing and `--help`.
pub fn command() -> clap::Command {
    Cli::command().args_override_self(true)
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match config::merge_config(argv) {
        Ok(a) => a,
        Err(e) => return e.report(),
    };
    let matches = match command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let resolved = manifest::resolved_args(&matches);
    match commands::dispatch(&cli, resolved) {
        Ok(()) => EXIT_OK,
        Err(e) => e.report(),
    }
}
