mod augment;
mod eval;
mod ingest;
mod phantom;
mod train;

use std::path::{Path, PathBuf};

use ftseg::ingest::DatasetCounts;

use crate::args::{Cli, Command};
use crate::failure::{CliResult, Failure};

/// What a successful subcommand hands back for `run.json`.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub config: serde_json::Value,
    pub outputs: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

pub fn dispatch(cli: &Cli) -> CliResult<Report> {
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Phantom => phantom::run(config, cli.seed, &cli.out),
        Command::Ingest { source, target } => ingest::run(config, cli.seed, &cli.out, source, target),
        Command::Augment {
            source,
            target,
            alpha,
            output,
            elastic,
        } => augment::run(source, target.as_deref(), *alpha, output, elastic.as_deref()),
        Command::Train {
            manifest,
            ablation,
            epochs,
            save_every,
        } => train::run(
            config,
            cli.seed,
            &cli.out,
            manifest,
            ablation.as_deref(),
            *epochs,
            *save_every,
        ),
        Command::Eval {
            checkpoint,
            manifest,
            gt_as_pred,
        } => eval::run(&cli.out, checkpoint, manifest, *gt_as_pred),
    }
}

pub(crate) fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<PathBuf> {
    std::fs::write(path, text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

/// Table of patients and slices per domain and split.
pub(crate) fn counts_table(c: &DatasetCounts) -> String {
    let rows = [
        ("source", "train", c.source_patients, c.source_slices),
        ("target", "train", c.target_train_patients, c.target_train_slices),
        ("target", "test", c.target_test_patients, c.target_test_slices),
    ];
    let mut s = format!("{:<8} {:<6} {:>9} {:>8}\n", "domain", "split", "patients", "slices");
    for (d, sp, p, n) in rows {
        s.push_str(&format!("{d:<8} {sp:<6} {p:>9} {n:>8}\n"));
    }
    s
}
