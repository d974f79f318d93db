use std::path::Path;

use ftseg::elastic::{make_displacement, warp, ElasticParams, Interp};
use ftseg::fourier::transfer_style;
use ftseg::ingest::pgm;
use ftseg::{Domain, Slice, SliceMeta};
use image::{ImageBuffer, Luma};
use serde_json::json;

use super::Report;
use crate::failure::{CliResult, Failure};

pub fn run(
    source: &Path,
    target: Option<&Path>,
    alpha: f64,
    output: &Path,
    elastic: Option<&[String]>,
) -> CliResult<Report> {
    let src = read_image(source)?;
    let (result, config) = match elastic {
        Some(values) => {
            let params = parse_elastic(values)?;
            let (h, w) = src.dim();
            params.validate(h, w)?;
            let field = make_displacement(h, w, &params)?;
            let warped = warp(src.pixels(), &field, Interp::Bilinear)?;
            let out = Slice::from_clamped(warped, src.meta.clone())?;
            (out, json!({ "mode": "elastic", "elastic": params }))
        }
        None => {
            let target = target.ok_or_else(|| Failure::input("--target is required without --elastic"))?;
            let tgt = read_image(target)?;
            if tgt.dim() != src.dim() {
                return Err(Failure::shape(format!(
                    "source is {:?} but target is {:?}",
                    src.dim(),
                    tgt.dim()
                )));
            }
            let out = transfer_style(&src, &tgt, alpha)?;
            (out, json!({ "mode": "style", "alpha": alpha }))
        }
    };
    write_image(output, &result)?;
    Ok(Report {
        config,
        outputs: vec![output.to_path_buf()],
        summary: json!({ "dims": result.dim(), "mean": result.mean() }),
    })
}

fn parse_elastic(values: &[String]) -> CliResult<ElasticParams> {
    let [seed, sigma, magnitude] = values else {
        return Err(Failure::input("--elastic takes SEED SIGMA MAGNITUDE"));
    };
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Failure::input(format!("--elastic: '{s}' is not a number")))
    };
    Ok(ElasticParams {
        seed: seed
            .parse()
            .map_err(|_| Failure::input(format!("--elastic: '{seed}' is not a seed")))?,
        grid_sigma: num(sigma)?,
        magnitude: num(magnitude)?,
    })
}

fn read_image(path: &Path) -> CliResult<Slice> {
    let meta = SliceMeta::new(
        path.file_stem().and_then(|s| s.to_str()).unwrap_or("image"),
        0,
        Domain::Source,
    );
    Ok(pgm::read_slice(path, meta)?)
}

/// `.png` is written as 16-bit PNG; anything else as a 16-bit graymap.
fn write_image(path: &Path, slice: &Slice) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        super::create_dir(dir)?;
    }
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if !is_png {
        return Ok(pgm::write_slice(path, slice)?);
    }
    let (h, w) = slice.dim();
    let data: Vec<u16> = slice
        .pixels()
        .iter()
        .map(|&v| (v * u16::MAX as f64).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, data).expect("buffer sized from slice");
    buf.save(path)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}
