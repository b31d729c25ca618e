//! Command-line driver: argument parsing, run directories, and the
//! end-to-end recipes built from `bitrain-core`.

pub mod args;
pub mod commands;
pub mod pipeline;
pub mod rundir;

use std::ffi::OsString;
use std::fmt;

use clap::Parser;

pub use args::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// A flag combination the command does not accept.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Exit code for a failed command: usage errors anywhere in the chain win,
/// then numeric failures; everything else is a data error.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        EXIT_USAGE
    } else if err
        .chain()
        .filter_map(|e| e.downcast_ref::<bitrain_core::Error>())
        .any(|e| e.is_numeric())
    {
        EXIT_NUMERIC
    } else {
        EXIT_DATA
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
/// Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
