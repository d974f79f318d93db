//! Command-line driver: dataset generation and ingestion, one-shot
//! augmentation, training and evaluation.
//!
//! Exit codes: 0 success, 2 input or config error, 3 shape or
//! compatibility error, 4 numerical failure during training.

mod args;
mod commands;
mod failure;
mod run_info;
pub mod svg;

use std::path::Path;

pub use args::{Cli, Command};
pub use failure::{Failure, EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, EXIT_SHAPE};
pub use run_info::{sha256_file, RunRecord};

use failure::CliResult;
use serde::de::DeserializeOwned;

/// Runs one subcommand and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let started = run_info::unix_now();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_INPUT;
        }
        // Fails only if a pool already exists, e.g. when called twice in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = commands::dispatch(&cli);
    let (code, report) = match &result {
        Ok(report) => (EXIT_OK, Some(report)),
        Err(f) => {
            eprintln!("error: {}", f.message);
            (f.code, None)
        }
    };
    let record = RunRecord::new(&cli, started, code, report, result.as_ref().err());
    if let Err(e) = record.write(&cli.out) {
        eprintln!("warning: could not write run.json: {e}");
    }
    code
}

/// Reads a JSON config, or returns the default when no path was given.
pub(crate) fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}
