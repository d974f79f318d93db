use std::path::Path;

use ftseg::phantom::{gen_dataset, PhantomConfig};

use super::{counts_table, Report};
use crate::failure::CliResult;
use crate::load_config;

pub fn run(config: Option<&Path>, seed: Option<u64>, out: &Path) -> CliResult<Report> {
    let mut cfg: PhantomConfig = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let manifest = gen_dataset(&cfg, out)?;
    print!("{}", counts_table(&manifest.counts));
    Ok(Report {
        config: serde_json::to_value(&cfg)?,
        outputs: vec![out.join("manifest.json")],
        summary: serde_json::to_value(&manifest.counts)?,
    })
}
