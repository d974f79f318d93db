//! CT volume preprocessing: HU windowing, axial slicing, lesion-size
//! filtering and patient-level splitting.
//!
//! A volume is stored as a raw little-endian `i16` file `<stem>.raw` next to a
//! sidecar `<stem>.json` holding `{"dims":[D,H,W],"spacing":[sz,sy,sx],"patient_id":..}`.
//! An optional lesion mask volume uses the same layout under `<stem>.mask.json`,
//! with any non-zero voxel marking lesion.

pub mod manifest;
pub mod pgm;

use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slice::{check_dims, Domain, MaskSlice, Slice, SliceMeta};

pub use manifest::{
    entry_for, patient_split, Dataset, DatasetCounts, DatasetManifest, ManifestEntry, ManifestWriter,
    Split,
};

pub const HU_LO: f64 = -600.0;
pub const HU_HI: f64 = 1500.0;
pub const MIN_LESION_PIXELS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub patient_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub voxels: Array3<i16>,
    pub meta: VolumeMeta,
}

impl Volume {
    pub fn new(voxels: Array3<i16>, spacing: [f64; 3], patient_id: impl Into<String>) -> Result<Self> {
        let (d, h, w) = voxels.dim();
        if d == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidInput("volume has an empty axis".into()));
        }
        Ok(Self {
            meta: VolumeMeta {
                dims: [d, h, w],
                spacing,
                patient_id: patient_id.into(),
            },
            voxels,
        })
    }

    /// Reads `<stem>.json` and the raw voxels beside it.
    pub fn read(sidecar: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
        let meta: VolumeMeta =
            serde_json::from_str(&text).map_err(|e| Error::format(sidecar, e.to_string()))?;
        let raw_path = raw_path_for(sidecar);
        let bytes = std::fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
        let [d, h, w] = meta.dims;
        if d == 0 || h == 0 || w == 0 {
            return Err(Error::format(sidecar, "dims must be positive"));
        }
        if bytes.len() != d * h * w * 2 {
            return Err(Error::format(
                &raw_path,
                format!("expected {} bytes for dims {:?}, found {}", d * h * w * 2, meta.dims, bytes.len()),
            ));
        }
        let vals: Vec<i16> = bytes
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect();
        let voxels = Array3::from_shape_vec((d, h, w), vals).expect("length checked");
        Ok(Self { voxels, meta })
    }

    /// Writes the sidecar at `sidecar` and voxels at the matching `.raw` path.
    pub fn write(&self, sidecar: &Path) -> Result<()> {
        let raw_path = raw_path_for(sidecar);
        let mut bytes = Vec::with_capacity(self.voxels.len() * 2);
        for v in self.voxels.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
        let json = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(sidecar, json).map_err(|e| Error::io(sidecar, e))
    }
}

pub fn raw_path_for(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("raw")
}

/// Sidecar path of the lesion mask that belongs to `sidecar`, if following
/// the `<stem>.mask.json` convention.
pub fn mask_sidecar_for(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("mask.json")
}

/// `clamp((v - lo) / (hi - lo), 0, 1)`
pub fn hu_window_value(v: f64, lo: f64, hi: f64) -> f64 {
    ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
}

pub fn hu_window(volume: &Volume, lo: f64, hi: f64) -> Result<Array3<f64>> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidConfig(format!("HU window needs lo < hi, got [{lo}, {hi}]")));
    }
    Ok(volume.voxels.mapv(|v| hu_window_value(v as f64, lo, hi)))
}

/// Centered crop or zero-pad of `img` to `(h, w)`.
pub fn center_fit<T: Copy + Default>(img: ArrayView2<T>, h: usize, w: usize) -> Array2<T> {
    let (ih, iw) = img.dim();
    let mut out = Array2::from_elem((h, w), T::default());
    let (src_r, dst_r, n_r) = fit_axis(ih, h);
    let (src_c, dst_c, n_c) = fit_axis(iw, w);
    out.slice_mut(s![dst_r..dst_r + n_r, dst_c..dst_c + n_c])
        .assign(&img.slice(s![src_r..src_r + n_r, src_c..src_c + n_c]));
    out
}

fn fit_axis(from: usize, to: usize) -> (usize, usize, usize) {
    if from >= to {
        ((from - to) / 2, 0, to)
    } else {
        (0, (to - from) / 2, from)
    }
}

/// Output geometry for [`volume_to_slices`]: a fixed size, or the native
/// size with odd edges cropped by one.
fn target_dims(h: usize, w: usize, size: Option<(usize, usize)>) -> (usize, usize) {
    size.unwrap_or((h - h % 2, w - w % 2))
}

/// One slice per axial index, in index order.
pub fn volume_to_slices(
    windowed: ArrayView3<f64>,
    size: Option<(usize, usize)>,
    patient_id: &str,
    domain: Domain,
) -> Result<Vec<Slice>> {
    let (d, h, w) = windowed.dim();
    let (th, tw) = target_dims(h, w, size);
    check_dims(th, tw)?;
    (0..d)
        .map(|k| {
            let img = center_fit(windowed.slice(s![k, .., ..]), th, tw);
            Slice::new(img, SliceMeta::new(patient_id, k as u32, domain))
        })
        .collect()
}

/// Mask volume counterpart of [`volume_to_slices`]; non-zero voxels are lesion.
pub fn mask_volume_to_slices(mask: &Volume, size: Option<(usize, usize)>) -> Result<Vec<MaskSlice>> {
    let (d, h, w) = mask.voxels.dim();
    let (th, tw) = target_dims(h, w, size);
    check_dims(th, tw)?;
    (0..d)
        .map(|k| {
            let bin = mask.voxels.slice(s![k, .., ..]).mapv(|v| u8::from(v != 0));
            MaskSlice::new(center_fit(bin.view(), th, tw))
        })
        .collect()
}

/// Sizes of the 4-connected foreground components, in scan order of their
/// first pixel.
pub fn component_sizes(mask: &MaskSlice) -> Vec<usize> {
    let m = mask.view();
    let (h, w) = m.dim();
    let mut seen = Array2::<bool>::from_elem((h, w), false);
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if m[[i, j]] == 0 || seen[[i, j]] {
                continue;
            }
            seen[[i, j]] = true;
            stack.push((i, j));
            let mut n = 0;
            while let Some((r, c)) = stack.pop() {
                n += 1;
                let nbrs = [
                    (r.wrapping_sub(1), c),
                    (r + 1, c),
                    (r, c.wrapping_sub(1)),
                    (r, c + 1),
                ];
                for (nr, nc) in nbrs {
                    if nr < h && nc < w && m[[nr, nc]] != 0 && !seen[[nr, nc]] {
                        seen[[nr, nc]] = true;
                        stack.push((nr, nc));
                    }
                }
            }
            sizes.push(n);
        }
    }
    sizes
}

/// Keeps pairs whose mask is non-empty and whose every lesion component has
/// at least `min_pixels` pixels.
pub fn filter_small_lesions(pairs: Vec<(Slice, MaskSlice)>, min_pixels: usize) -> Vec<(Slice, MaskSlice)> {
    pairs
        .into_iter()
        .filter(|(_, m)| {
            let sizes = component_sizes(m);
            !sizes.is_empty() && sizes.iter().all(|&n| n >= min_pixels)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub size: Option<(usize, usize)>,
    pub hu_lo: f64,
    pub hu_hi: f64,
    pub min_lesion_pixels: usize,
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            size: Some((64, 64)),
            hu_lo: HU_LO,
            hu_hi: HU_HI,
            min_lesion_pixels: MIN_LESION_PIXELS,
            train_frac: 0.7,
            seed: 0,
        }
    }
}

/// Sidecars of image volumes in `dir`, sorted by path.
pub fn list_volumes(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.ends_with(".json") && !name.ends_with(".mask.json") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

type Case = (Slice, Option<MaskSlice>);

fn load_cases(sidecar: &Path, domain: Domain, cfg: &IngestConfig) -> Result<Vec<Case>> {
    let vol = Volume::read(sidecar)?;
    let windowed = hu_window(&vol, cfg.hu_lo, cfg.hu_hi)?;
    let slices = volume_to_slices(windowed.view(), cfg.size, &vol.meta.patient_id, domain)?;
    let mask_path = mask_sidecar_for(sidecar);
    if !mask_path.exists() {
        return Ok(slices.into_iter().map(|s| (s, None)).collect());
    }
    let mvol = Volume::read(&mask_path)?;
    if mvol.meta.dims != vol.meta.dims {
        return Err(Error::format(
            &mask_path,
            format!("mask dims {:?} differ from image dims {:?}", mvol.meta.dims, vol.meta.dims),
        ));
    }
    let masks = mask_volume_to_slices(&mvol, cfg.size)?;
    Ok(slices.into_iter().zip(masks).map(|(s, m)| (s, Some(m))).collect())
}

/// Converts labeled source volumes and target volumes into graymap slices
/// under `out_dir` and writes `manifest.json`.
///
/// Source slices pass through [`filter_small_lesions`] and are all used for
/// training; target patients are divided by [`patient_split`].
pub fn ingest_volumes(
    source_dir: &Path,
    target_dir: &Path,
    out_dir: &Path,
    cfg: &IngestConfig,
) -> Result<DatasetManifest> {
    let mut source_pairs = Vec::new();
    for sidecar in list_volumes(source_dir)? {
        for (s, m) in load_cases(&sidecar, Domain::Source, cfg)? {
            let m = m.ok_or_else(|| Error::format(&sidecar, "source volume has no mask volume"))?;
            source_pairs.push((s, m));
        }
    }
    let source_pairs = filter_small_lesions(source_pairs, cfg.min_lesion_pixels);
    let mut target_cases = Vec::new();
    for sidecar in list_volumes(target_dir)? {
        target_cases.extend(load_cases(&sidecar, Domain::Target, cfg)?);
    }
    let mut writer = manifest::ManifestWriter::new(out_dir);
    for (s, m) in &source_pairs {
        writer.add(s, Some(m))?;
    }
    let mut target = manifest::ManifestWriter::new(out_dir);
    for (s, m) in &target_cases {
        target.add(s, m.as_ref())?;
    }
    let target = patient_split(&target.finish(), cfg.train_frac, cfg.seed)?;
    let mut all = writer.finish();
    all.entries.extend(target.entries);
    all.finalize();
    all.save(&out_dir.join("manifest.json"))?;
    Ok(all)
}
