use std::path::Path;

use ftseg::ingest::{ingest_volumes, IngestConfig};

use super::{counts_table, Report};
use crate::failure::CliResult;
use crate::load_config;

pub fn run(
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    source: &Path,
    target: &Path,
) -> CliResult<Report> {
    let mut cfg: IngestConfig = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let manifest = ingest_volumes(source, target, out, &cfg)?;
    print!("{}", counts_table(&manifest.counts));
    Ok(Report {
        config: serde_json::to_value(&cfg)?,
        outputs: vec![out.join("manifest.json")],
        summary: serde_json::to_value(&manifest.counts)?,
    })
}
