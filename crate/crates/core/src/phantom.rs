//! Synthetic two-domain CT-like dataset.
//!
//! Source cases show one oval lesion inside one of two elliptical lung
//! fields. Target cases show several irregular blobs spread over both lungs
//! and a brighter overall intensity profile.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::elastic::{make_displacement, ElasticParams};
use crate::error::{Error, Result};
use crate::fourier::transfer_style;
use crate::ingest::manifest::{entry_for, patient_split, DatasetManifest, ManifestWriter, Split};
use crate::ingest::{component_sizes, pgm};
use crate::slice::{check_dims, Domain, MaskSlice, Slice, SliceMeta};
use crate::trainer::mix_seed;

/// Minimum background-level difference between the two styles.
pub const MIN_BACKGROUND_GAP: f64 = 0.15;
/// Minimum difference in mean image intensity between the domains.
pub const MIN_MEAN_GAP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceStyle {
    pub background_level: f64,
    pub lung_level: f64,
    pub lesion_level: f64,
    pub noise_sigma: f64,
    /// Lesion semi-axis range as a fraction of the image height.
    pub oval_axes: (f64, f64),
}

impl Default for SourceStyle {
    fn default() -> Self {
        Self {
            background_level: 0.05,
            lung_level: 0.15,
            lesion_level: 0.6,
            noise_sigma: 0.03,
            oval_axes: (0.06, 0.12),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetStyle {
    pub background_level: f64,
    pub lung_level: f64,
    pub lesion_level: f64,
    pub noise_sigma: f64,
    pub blob_count: (usize, usize),
    /// Blob radius range as a fraction of the image height.
    pub blob_scale: (f64, f64),
}

impl Default for TargetStyle {
    fn default() -> Self {
        Self {
            background_level: 0.35,
            lung_level: 0.5,
            lesion_level: 0.85,
            noise_sigma: 0.03,
            blob_count: (2, 5),
            blob_scale: (0.05, 0.09),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub size: (usize, usize),
    pub n_source_patients: usize,
    pub n_target_patients: usize,
    pub slices_per_patient: usize,
    /// Share of target slices used (unlabeled) for training.
    pub train_frac: f64,
    pub source_style: SourceStyle,
    pub target_style: TargetStyle,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size: (64, 64),
            n_source_patients: 16,
            n_target_patients: 16,
            slices_per_patient: 4,
            train_frac: 0.7,
            source_style: SourceStyle::default(),
            target_style: TargetStyle::default(),
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        check_dims(self.size.0, self.size.1).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if self.size.0 < 32 || self.size.1 < 32 {
            return bad(format!("phantom size must be at least 32x32, got {:?}", self.size));
        }
        let s = &self.source_style;
        let t = &self.target_style;
        let levels = [
            s.background_level,
            s.lung_level,
            s.lesion_level,
            t.background_level,
            t.lung_level,
            t.lesion_level,
        ];
        if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return bad("style levels must lie in [0, 1]".into());
        }
        if (s.background_level - t.background_level).abs() < MIN_BACKGROUND_GAP {
            return bad(format!(
                "source and target background levels must differ by at least {MIN_BACKGROUND_GAP}"
            ));
        }
        if s.lesion_level <= s.lung_level || t.lesion_level <= t.lung_level {
            return bad("lesions must be brighter than lung tissue".into());
        }
        if !(s.noise_sigma >= 0.0 && t.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        let (a0, a1) = s.oval_axes;
        if !(0.02 <= a0 && a0 <= a1 && a1 <= 0.12) {
            return bad(format!("oval_axes must satisfy 0.02 <= lo <= hi <= 0.12, got {:?}", s.oval_axes));
        }
        let (b0, b1) = t.blob_count;
        if !(2 <= b0 && b0 <= b1 && b1 <= 5) {
            return bad(format!("blob_count must satisfy 2 <= lo <= hi <= 5, got {:?}", t.blob_count));
        }
        let (c0, c1) = t.blob_scale;
        if !(0.02 <= c0 && c0 <= c1 && c1 <= 0.15) {
            return bad(format!("blob_scale must satisfy 0.02 <= lo <= hi <= 0.15, got {:?}", t.blob_scale));
        }
        if self.n_source_patients == 0 || self.slices_per_patient == 0 {
            return bad("need at least one source patient and one slice per patient".into());
        }
        if self.n_target_patients < 2 {
            return bad("need at least two target patients for a patient-level split".into());
        }
        if !(self.train_frac > 0.0 && self.train_frac <= 1.0) {
            return bad(format!("train_frac must be in (0, 1], got {}", self.train_frac));
        }
        Ok(())
    }
}

/// Axis-aligned ellipse in pixel coordinates; pixel `(i, j)` is inside when
/// `((i - cy) / ay)^2 + ((j - cx) / ax)^2 <= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub ay: f64,
    pub ax: f64,
}

impl Ellipse {
    pub fn contains(&self, i: usize, j: usize) -> bool {
        let y = (i as f64 - self.cy) / self.ay;
        let x = (j as f64 - self.cx) / self.ax;
        y * y + x * x <= 1.0
    }

    pub fn rasterize(&self, h: usize, w: usize) -> Array2<bool> {
        Array2::from_shape_fn((h, w), |(i, j)| self.contains(i, j))
    }
}

/// Left and right lung fields with small per-case jitter.
pub fn lung_fields(h: usize, w: usize, rng: &mut impl Rng) -> [Ellipse; 2] {
    let (hf, wf) = (h as f64, w as f64);
    let mut jitter = |scale: f64| 1.0 + scale * (rng.random::<f64>() * 2.0 - 1.0);
    let ay = 0.36 * hf * jitter(0.06);
    let ax = 0.17 * wf * jitter(0.06);
    let cy = hf / 2.0 - 0.5;
    [
        Ellipse { cy, cx: 0.28 * wf, ay, ax },
        Ellipse { cy, cx: 0.72 * wf - 1.0, ay, ax },
    ]
}

/// A generated case before and after noise.
#[derive(Debug, Clone)]
pub struct Case {
    pub clean: Array2<f64>,
    pub image: Array2<f64>,
    pub mask: MaskSlice,
    pub lungs: [Ellipse; 2],
}

fn paint(lungs: &[Ellipse; 2], lesion: &Array2<bool>, bg: f64, lung: f64, lesion_level: f64) -> Array2<f64> {
    Array2::from_shape_fn(lesion.dim(), |(i, j)| {
        if lesion[[i, j]] {
            lesion_level
        } else if lungs.iter().any(|l| l.contains(i, j)) {
            lung
        } else {
            bg
        }
    })
}

fn add_noise(clean: &Array2<f64>, sigma: f64, rng: &mut impl Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    clean.mapv(|v| pgm::quantize16((v + normal.sample(rng)).clamp(0.0, 1.0)))
}

/// Source case with its lesion ellipse.
pub fn render_source(cfg: &PhantomConfig, case_seed: u64) -> (Case, Ellipse) {
    let (h, w) = cfg.size;
    let st = &cfg.source_style;
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    let lungs = lung_fields(h, w, &mut rng);
    let side = rng.random_range(0..2);
    let lung = lungs[side];
    let hf = h as f64;
    let (lo, hi) = st.oval_axes;
    let ay = hf * rng.random_range(lo..=hi);
    let ax = hf * rng.random_range(lo..=hi);
    let shrunk = Ellipse {
        ay: lung.ay - 1.0,
        ax: lung.ax - 1.0,
        ..lung
    };
    let lesion = loop {
        let cy = lung.cy + (rng.random::<f64>() * 2.0 - 1.0) * (lung.ay - ay);
        let cx = lung.cx + (rng.random::<f64>() * 2.0 - 1.0) * (lung.ax - ax).max(0.0);
        let e = Ellipse { cy, cx, ay, ax };
        let r = e.rasterize(h, w);
        let inside = r
            .indexed_iter()
            .all(|((i, j), &on)| !on || shrunk.contains(i, j));
        if inside && r.iter().any(|&v| v) {
            break e;
        }
    };
    let lesion_px = lesion.rasterize(h, w);
    let clean = paint(&lungs, &lesion_px, st.background_level, st.lung_level, st.lesion_level);
    let image = add_noise(&clean, st.noise_sigma, &mut rng);
    let case = Case {
        clean,
        image,
        mask: MaskSlice::from_bools(&lesion_px),
        lungs,
    };
    (case, lesion)
}

/// Target case: patchy blobs from a thresholded sum of Gaussian bumps and
/// smoothed noise, with at least one component in each lung.
pub fn render_target(cfg: &PhantomConfig, case_seed: u64) -> Case {
    let (h, w) = cfg.size;
    let st = &cfg.target_style;
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    let lungs = lung_fields(h, w, &mut rng);
    let hf = h as f64;
    loop {
        let n = rng.random_range(st.blob_count.0..=st.blob_count.1);
        let blobs: Vec<(usize, f64, f64, f64)> = (0..n)
            .map(|k| {
                let side = if k < 2 { k } else { rng.random_range(0..2) };
                let l = lungs[side];
                let r = rng.random::<f64>().sqrt() * 0.7;
                let t = rng.random::<f64>() * std::f64::consts::TAU;
                let s = hf * rng.random_range(st.blob_scale.0..=st.blob_scale.1);
                (side, l.cy + r * l.ay * t.sin(), l.cx + r * l.ax * t.cos(), s)
            })
            .collect();
        let noise = make_displacement(
            h,
            w,
            &ElasticParams {
                grid_sigma: hf / 24.0,
                magnitude: 1.0,
                seed: rng.random(),
            },
        )
        .expect("fixed valid parameters")
        .dx;
        let lesion = Array2::from_shape_fn((h, w), |(i, j)| {
            let (y, x) = (i as f64, j as f64);
            let bump = blobs
                .iter()
                .filter(|b| lungs[b.0].contains(i, j))
                .map(|&(_, cy, cx, s)| (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * s * s)).exp())
                .fold(0.0, f64::max);
            bump + 0.35 * noise[[i, j]] > 0.5
        });
        let per_lung_ok = lungs.iter().all(|l| {
            let part = Array2::from_shape_fn((h, w), |(i, j)| lesion[[i, j]] && l.contains(i, j));
            !component_sizes(&MaskSlice::from_bools(&part)).is_empty()
        });
        if !per_lung_ok {
            continue;
        }
        let clean = paint(&lungs, &lesion, st.background_level, st.lung_level, st.lesion_level);
        let image = add_noise(&clean, st.noise_sigma, &mut rng);
        return Case {
            clean,
            image,
            mask: MaskSlice::from_bools(&lesion),
            lungs,
        };
    }
}

fn to_pair(case: Case, meta: SliceMeta) -> (Slice, MaskSlice) {
    let slice = Slice::new(case.image, meta).expect("generated pixels lie in [0, 1]");
    (slice, case.mask)
}

pub fn gen_source_case(cfg: &PhantomConfig, case_seed: u64) -> (Slice, MaskSlice) {
    let meta = SliceMeta::new(format!("case-{case_seed}"), 0, Domain::Source);
    to_pair(render_source(cfg, case_seed).0, meta)
}

pub fn gen_target_case(cfg: &PhantomConfig, case_seed: u64) -> (Slice, MaskSlice) {
    let meta = SliceMeta::new(format!("case-{case_seed}"), 0, Domain::Target);
    to_pair(render_target(cfg, case_seed), meta)
}

pub fn case_seed(master: u64, domain: Domain, patient: usize, slice: usize) -> u64 {
    let tag = match domain {
        Domain::Source => 1,
        _ => 2,
    };
    mix_seed(mix_seed(master, tag), ((patient as u64) << 16) | slice as u64)
}

pub fn source_patient_id(k: usize) -> String {
    format!("S{k:03}")
}

pub fn target_patient_id(k: usize) -> String {
    format!("T{k:03}")
}

/// In-memory phantom dataset with its manifest.
#[derive(Debug, Clone)]
pub struct PhantomSet {
    pub source: Vec<(Slice, MaskSlice)>,
    pub target_train: Vec<(Slice, MaskSlice)>,
    pub target_test: Vec<(Slice, MaskSlice)>,
    pub manifest: DatasetManifest,
}

impl PhantomSet {
    /// Target training images without their masks.
    pub fn target_train_images(&self) -> Vec<Slice> {
        self.target_train.iter().map(|(s, _)| s.clone()).collect()
    }
}

pub fn generate(cfg: &PhantomConfig) -> Result<PhantomSet> {
    cfg.validate()?;
    let mut source = Vec::new();
    for p in 0..cfg.n_source_patients {
        for k in 0..cfg.slices_per_patient {
            let meta = SliceMeta::new(source_patient_id(p), k as u32, Domain::Source);
            let seed = case_seed(cfg.seed, Domain::Source, p, k);
            source.push(to_pair(render_source(cfg, seed).0, meta));
        }
    }
    let mut target = Vec::new();
    for p in 0..cfg.n_target_patients {
        for k in 0..cfg.slices_per_patient {
            let meta = SliceMeta::new(target_patient_id(p), k as u32, Domain::Target);
            let seed = case_seed(cfg.seed, Domain::Target, p, k);
            target.push(to_pair(render_target(cfg, seed), meta));
        }
    }
    let mean_of = |v: &[(Slice, MaskSlice)]| v.iter().map(|(s, _)| s.mean()).sum::<f64>() / v.len() as f64;
    let gap = (mean_of(&source) - mean_of(&target)).abs();
    if gap < MIN_MEAN_GAP {
        return Err(Error::InvalidConfig(format!(
            "domain mean intensities differ by {gap:.4}, need at least {MIN_MEAN_GAP}"
        )));
    }

    let target_manifest = DatasetManifest {
        entries: target.iter().map(|(s, _)| entry_for(&s.meta, true)).collect(),
        counts: Default::default(),
    };
    let split = patient_split(&target_manifest, cfg.train_frac, mix_seed(cfg.seed, 3))?;
    let split_of = |pid: &str| {
        split
            .entries
            .iter()
            .find(|e| e.patient_id == pid)
            .map(|e| e.split)
            .expect("every target patient is split")
    };
    let (target_train, target_test): (Vec<_>, Vec<_>) = target
        .into_iter()
        .partition(|(s, _)| split_of(&s.meta.patient_id) == Split::Train);

    let mut manifest = DatasetManifest {
        entries: source
            .iter()
            .map(|(s, _)| entry_for(&s.meta, true))
            .chain(split.entries.iter().cloned())
            .collect(),
        counts: Default::default(),
    };
    manifest.finalize();
    Ok(PhantomSet {
        source,
        target_train,
        target_test,
        manifest,
    })
}

/// Generates the dataset and writes graymaps plus `manifest.json` under `out_dir`.
pub fn gen_dataset(cfg: &PhantomConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let set = generate(cfg)?;
    let mut writer = ManifestWriter::new(out_dir);
    for (s, m) in set.source.iter().chain(&set.target_train).chain(&set.target_test) {
        writer.add(s, Some(m))?;
    }
    let written = writer.finish();
    let mut manifest = set.manifest;
    debug_assert_eq!(written.entries.len(), manifest.entries.len());
    manifest.finalize();
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Threshold on mean intensity at the midpoint of the two class means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanIntensityClassifier {
    pub threshold: f64,
    /// Whether target images lie above the threshold.
    pub target_above: bool,
}

impl MeanIntensityClassifier {
    pub fn fit(source: &[Slice], target: &[Slice]) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let m = |v: &[Slice]| v.iter().map(Slice::mean).sum::<f64>() / v.len() as f64;
        let (ms, mt) = (m(source), m(target));
        Ok(Self {
            threshold: 0.5 * (ms + mt),
            target_above: mt > ms,
        })
    }

    pub fn is_target(&self, s: &Slice) -> bool {
        (s.mean() > self.threshold) == self.target_above
    }

    /// Fraction of slices assigned to their true domain.
    pub fn accuracy(&self, source: &[Slice], target: &[Slice]) -> f64 {
        let right = source.iter().filter(|s| !self.is_target(s)).count()
            + target.iter().filter(|s| self.is_target(s)).count();
        right as f64 / (source.len() + target.len()) as f64
    }
}

/// Classifier accuracy on raw domains and after style-transferring each
/// source slice onto a random target slice, over `n` cases per domain.
pub fn domain_gap_check(cfg: &PhantomConfig, n: usize, alpha: f64) -> Result<(f64, f64)> {
    cfg.validate()?;
    let src: Vec<Slice> = (0..n)
        .map(|k| gen_source_case(cfg, case_seed(cfg.seed ^ 0x9a9, Domain::Source, k, 0)).0)
        .collect();
    let tgt: Vec<Slice> = (0..n)
        .map(|k| gen_target_case(cfg, case_seed(cfg.seed ^ 0x9a9, Domain::Target, k, 0)).0)
        .collect();
    let clf = MeanIntensityClassifier::fit(&src, &tgt)?;
    let before = clf.accuracy(&src, &tgt);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x7a));
    let moved: Vec<Slice> = src
        .iter()
        .map(|s| transfer_style(s, &tgt[rng.random_range(0..n)], alpha))
        .collect::<Result<_>>()?;
    Ok((before, clf.accuracy(&moved, &tgt)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ellipse_oracle(e: &Ellipse, h: usize, w: usize) -> usize {
        // Count lattice points row by row from the closed-form chord.
        let mut n = 0;
        for i in 0..h {
            let y = (i as f64 - e.cy) / e.ay;
            if y * y > 1.0 {
                continue;
            }
            let half = e.ax * (1.0 - y * y).sqrt();
            let lo = (e.cx - half).ceil().max(0.0) as i64;
            let hi = (e.cx + half).floor().min(w as f64 - 1.0) as i64;
            for j in lo..=hi {
                if e.contains(i, j as usize) {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn source_mask_is_exact_ellipse() {
        let cfg = PhantomConfig::default();
        for seed in 0..20 {
            let (case, e) = render_source(&cfg, seed);
            assert_eq!(case.mask.count(), ellipse_oracle(&e, 64, 64));
            let in_lungs: Vec<usize> = case
                .lungs
                .iter()
                .map(|l| {
                    case.mask
                        .view()
                        .indexed_iter()
                        .filter(|&((i, j), &v)| v == 1 && l.contains(i, j))
                        .count()
                })
                .collect();
            assert!(in_lungs.contains(&case.mask.count()), "lesion must sit in one lung");
            for ((i, j), &v) in case.mask.view().indexed_iter() {
                if v == 1 {
                    assert!(case.clean[[i, j]] > cfg.source_style.lung_level);
                }
            }
        }
    }

    #[test]
    fn target_has_a_lesion_in_each_lung() {
        let cfg = PhantomConfig::default();
        for seed in 0..20 {
            let case = render_target(&cfg, seed);
            for l in &case.lungs {
                assert!(case.mask.view().indexed_iter().any(|((i, j), &v)| v == 1 && l.contains(i, j)));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = PhantomConfig::default();
        assert_eq!(gen_source_case(&cfg, 5), gen_source_case(&cfg, 5));
        assert_eq!(gen_target_case(&cfg, 5), gen_target_case(&cfg, 5));
        assert_ne!(gen_target_case(&cfg, 5), gen_target_case(&cfg, 6));
    }

    #[test]
    fn domain_means_differ() {
        let cfg = PhantomConfig::default();
        let ms: f64 = (0..100).map(|k| gen_source_case(&cfg, k).0.mean()).sum::<f64>() / 100.0;
        let mt: f64 = (0..100).map(|k| gen_target_case(&cfg, k).0.mean()).sum::<f64>() / 100.0;
        assert!((ms - mt).abs() >= MIN_MEAN_GAP);
    }

    #[test]
    fn config_rejects_small_gap() {
        let mut cfg = PhantomConfig::default();
        cfg.target_style.background_level = cfg.source_style.background_level + 0.1;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn counts_follow_config() {
        let cfg = PhantomConfig {
            n_source_patients: 3,
            n_target_patients: 4,
            slices_per_patient: 2,
            ..PhantomConfig::default()
        };
        let set = generate(&cfg).unwrap();
        let c = &set.manifest.counts;
        assert_eq!(c.source_slices, 6);
        assert_eq!(c.source_patients, 3);
        assert_eq!(c.target_train_slices + c.target_test_slices, 8);
        assert_eq!(set.target_train.len(), c.target_train_slices);
        assert!(set.source.iter().all(|(_, m)| !m.is_empty()));
    }
}
