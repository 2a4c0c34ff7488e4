//! Command-line front end: corpus preparation, training, conversion,
//! score synthesis and evaluation.

use std::ffi::OsString;

use clap::Parser;

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod score;

pub use commands::Cli;
pub use config::{Profile, RunConfig};
pub use error::{CliError, CliResult};

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
