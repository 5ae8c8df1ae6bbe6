//! Command-line surface for the concept-whitening laboratory: synthetic data
//! generation, alternating-optimization training, the BN-to-CW warm-start
//! swap, and the interpretability reports.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod logging;
pub mod manifest;
pub mod tensorfile;

use clap::Parser;

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "cw", version, about = "Concept-whitening laboratory")]
pub enum Cli {
    /// Generate a synthetic task (tensors, labels, manifest).
    Gen(commands::gen::GenArgs),
    /// Train a model with the alternating optimization.
    Train(commands::train::TrainArgs),
    /// Replace a BN slot with a calibrated CW layer.
    SwapBn(commands::swap::SwapArgs),
    /// Emit an interpretability report.
    Report(commands::report::ReportArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli {
        Cli::Gen(args) => commands::gen::run(&args),
        Cli::Train(args) => commands::train::run(&args),
        Cli::SwapBn(args) => commands::swap::run(&args),
        Cli::Report(args) => commands::report::run(&args),
    }
}

/// Parse arguments and run, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints usage itself; exit 2 matches its config-error class
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            logging::log(logging::Level::Error, &format!("error: {}", e));
            e.exit_code()
        }
    }
}
