use std::path::Path;

use ftseg::ingest::manifest::{Dataset, Split};
use ftseg::metrics::{MetricReport, SliceMetrics};
use ftseg::projection::project_domains;
use ftseg::segnet::{extract_features, load_checkpoint, predict, NetParams};
use ftseg::{Domain, Slice};
use rayon::prelude::*;
use serde_json::json;

use super::{write_text, Report};
use crate::failure::{CliResult, Failure};
use crate::svg;

pub fn run(out: &Path, checkpoint: &Path, manifest: &Path, gt_as_pred: bool) -> CliResult<Report> {
    let params = load_checkpoint(checkpoint)?.params;
    let data = Dataset::open(manifest)?;
    let test = data.target_test()?;
    let size = params.config().input_size;
    if let Some((s, _)) = test.iter().find(|(s, _)| s.dim() != size) {
        return Err(Failure::shape(format!(
            "checkpoint expects {size:?} inputs but {} is {:?}",
            s.meta.id(),
            s.dim()
        )));
    }

    let per_slice = test
        .par_iter()
        .map(|(s, m)| {
            let probs = if gt_as_pred {
                m.to_f64()
            } else {
                predict(&params, s.pixels())?.into_inner()
            };
            SliceMetrics::evaluate(s.meta.id(), probs.view(), m)
        })
        .collect::<ftseg::Result<Vec<_>>>()?;
    let report = MetricReport::new(per_slice)?;

    super::create_dir(out)?;
    let mut outputs = Vec::new();
    outputs.push(write_text(&out.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?);
    let mut buf = Vec::new();
    report.write_per_slice_csv(&mut buf)?;
    outputs.push(write_text(&out.join("per_slice.csv"), &String::from_utf8_lossy(&buf))?);
    buf.clear();
    report.write_boxplot_csv(&mut buf)?;
    outputs.push(write_text(&out.join("boxplot.csv"), &String::from_utf8_lossy(&buf))?);
    outputs.push(write_text(&out.join("boxplot.svg"), &svg::boxplot(&report))?);

    let source: Vec<Slice> = data
        .manifest
        .select(Domain::Source, Split::Train)
        .map(|e| data.load_slice(e))
        .collect::<ftseg::Result<_>>()?;
    let target: Vec<&Slice> = test.iter().map(|(s, _)| s).collect();
    let mut separation = serde_json::Value::Null;
    if source.len() + target.len() >= 2 && !source.is_empty() && !target.is_empty() {
        let fa = features(&params, source.iter())?;
        let fb = features(&params, target.iter().copied())?;
        let proj = project_domains(&fa, &fb)?;
        let mut csv = String::from("domain,slice_id,x,y\n");
        for (name, pts, slices) in [
            ("source", &proj.a, source.iter().collect::<Vec<_>>()),
            ("target", &proj.b, target.clone()),
        ] {
            for (row, s) in pts.rows().into_iter().zip(slices) {
                csv.push_str(&format!("{name},{},{},{}\n", s.meta.id(), row[0], row[1]));
            }
        }
        outputs.push(write_text(&out.join("features.csv"), &csv)?);
        outputs.push(write_text(&out.join("features.svg"), &svg::scatter(&proj.a, &proj.b, proj.separation))?);
        separation = json!(proj.separation);
    }

    for (name, a) in &report.aggregate {
        println!("{name:<5} {:.4} +/- {:.4}", a.mean, a.ci95_half_width);
    }
    Ok(Report {
        config: json!({
            "checkpoint": checkpoint,
            "manifest": manifest,
            "gt_as_pred": gt_as_pred,
        }),
        outputs,
        summary: json!({
            "slices": report.per_slice.len(),
            "aggregate": report.aggregate,
            "feature_separation": separation,
        }),
    })
}

fn features<'a>(params: &NetParams, slices: impl Iterator<Item = &'a Slice>) -> CliResult<Vec<Vec<f64>>> {
    let v: Vec<&Slice> = slices.collect();
    Ok(v.par_iter()
        .map(|s| extract_features(params, s.pixels()))
        .collect::<ftseg::Result<Vec<_>>>()?)
}
