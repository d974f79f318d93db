use std::path::Path;

use ftseg::ingest::manifest::Dataset;
use ftseg::segnet::{save_checkpoint, Checkpoint, Dtype, NetParams};
use ftseg::trainer::{train_with_observer, Ablation, Seeds, TrainConfig, TrainLog};
use ftseg::Error;
use serde_json::json;

use super::{create_dir, write_text, Report};
use crate::failure::{CliResult, Failure, EXIT_NUMERIC};
use crate::load_config;

/// Checkpoints are stored in f64 so teacher replays are bit-exact.
const CKPT_DTYPE: Dtype = Dtype::F64;

pub fn run(
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    manifest: &Path,
    ablation: Option<&str>,
    epochs: Option<usize>,
    save_every: u64,
) -> CliResult<Report> {
    let mut cfg: TrainConfig = load_config(config)?;
    if let Some(s) = seed {
        cfg.seeds = Seeds::from_master(s);
    }
    if let Some(name) = ablation {
        cfg.ablation = Ablation::from_name(name).ok_or_else(|| {
            Failure::input(format!(
                "unknown ablation '{name}', expected full, source-only, no-cgftda, no-con or no-ent"
            ))
        })?;
    }
    if let Some(n) = epochs {
        cfg.epochs = n;
    }
    cfg.validate()?;

    let data = Dataset::open(manifest)?;
    let source = data.source_train()?;
    let target = data.target_train()?;
    create_dir(out)?;
    let ckpt_dir = out.join("checkpoints");
    if save_every > 0 {
        create_dir(&ckpt_dir)?;
    }

    let mut log = TrainLog::default();
    let mut ckpt_error = None;
    let result = train_with_observer(&cfg, &source, &target, |state, row| {
        log.rows.push(*row);
        if save_every > 0 && state.step % save_every == 0 && ckpt_error.is_none() {
            for (role, params) in [("student", &state.student), ("teacher", &state.teacher)] {
                let path = ckpt_dir.join(format!("step{:06}_{role}.ckpt", state.step));
                if let Err(e) = save(&path, params, state.step, role) {
                    ckpt_error = Some(e);
                }
            }
        }
    });
    let log_path = write_text(&out.join("train_log.csv"), &log.to_csv())?;
    if let Some(e) = ckpt_error {
        return Err(e.into());
    }
    let output = match result {
        Ok(o) => o,
        Err(Error::NonFiniteLoss { step, dice, con, ent }) => {
            return Err(Failure {
                code: EXIT_NUMERIC,
                message: format!(
                    "non-finite loss at step {step} (last good step {}): dice={dice} con={con} ent={ent}",
                    step - 1
                ),
            })
        }
        Err(e) => return Err(e.into()),
    };

    let state = &output.state;
    let student = out.join("student.ckpt");
    let teacher = out.join("teacher.ckpt");
    save(&student, &state.student, state.step, "student")?;
    save(&teacher, &state.teacher, state.step, "teacher")?;
    let cfg_path = write_text(&out.join("train_config.json"), &(serde_json::to_string_pretty(&cfg)? + "\n"))?;
    let last = output.log.rows.last().map(|r| r.losses);
    println!(
        "trained {} steps over {} epochs ({}); final loss {:.6}",
        state.step,
        cfg.epochs,
        cfg.ablation.name(),
        last.map_or(f64::NAN, |l| l.total)
    );
    Ok(Report {
        config: serde_json::to_value(&cfg)?,
        outputs: vec![student, teacher, log_path, cfg_path],
        summary: json!({
            "steps": state.step,
            "ablation": cfg.ablation.name(),
            "source_slices": source.len(),
            "target_slices": target.len(),
        }),
    })
}

fn save(path: &Path, params: &NetParams, step: u64, role: &str) -> ftseg::Result<()> {
    let ckpt = Checkpoint {
        params: params.clone(),
        step,
        role: role.to_string(),
    };
    save_checkpoint(path, &ckpt, CKPT_DTYPE)
}
