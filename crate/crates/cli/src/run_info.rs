use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::args::Cli;
use crate::commands::Report;
use crate::failure::Failure;

#[derive(Debug, Clone, Serialize)]
pub struct BuildInfo {
    pub package_version: &'static str,
    pub git_rev: &'static str,
}

/// Echo of a run: resolved config, seeds, build identity and output hashes.
/// Timestamps appear only here.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub command: &'static str,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub config: serde_json::Value,
    pub outputs: BTreeMap<String, String>,
    pub summary: serde_json::Value,
    pub exit_code: i32,
    pub error: Option<String>,
    pub build: BuildInfo,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunRecord {
    pub fn new(cli: &Cli, started: u64, code: i32, report: Option<&Report>, err: Option<&Failure>) -> Self {
        let mut outputs = BTreeMap::new();
        if let Some(r) = report {
            for p in &r.outputs {
                if let Ok(h) = sha256_file(p) {
                    outputs.insert(display_rel(&cli.out, p), h);
                }
            }
        }
        Self {
            command: cli.command.name(),
            argv: std::env::args().collect(),
            seed: cli.seed,
            threads: cli.threads,
            config: report.map(|r| r.config.clone()).unwrap_or(serde_json::Value::Null),
            outputs,
            summary: report.map(|r| r.summary.clone()).unwrap_or(serde_json::Value::Null),
            exit_code: code,
            error: err.map(|e| e.message.clone()),
            build: BuildInfo {
                package_version: env!("CARGO_PKG_VERSION"),
                git_rev: env!("FTSEG_GIT_REV"),
            },
            started_unix: started,
            finished_unix: unix_now(),
        }
    }

    pub fn write(&self, out: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(out)?;
        let path = out.join("run.json");
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

fn display_rel(base: &Path, p: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).to_string_lossy().replace('\\', "/")
}
