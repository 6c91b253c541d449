//! Command-line front end: CSV ingestion, analysis dispatch and report output.
//!
//! Exit codes: 0 on success, 1 on invalid input or arguments, 2 when an
//! estimator fails to converge.

pub mod commands;
pub mod data;
pub mod report;

use std::ffi::OsString;

use clap::Parser;

pub use commands::{Cli, CliError, Command, Outcome, Scenario};
pub use report::{Approach, Report};

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = cli.command.execute().and_then(|mut out| commands::emit(&mut out, cli.command.output()));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
