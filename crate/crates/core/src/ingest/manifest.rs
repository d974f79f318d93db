//! Dataset manifest: which slice files exist, their masks, and the
//! patient-level train/test assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pgm;
use crate::error::{Error, Result};
use crate::slice::{Domain, MaskSlice, Slice, SliceMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub slice_index: u32,
    /// Relative to the manifest's directory.
    pub slice_path: String,
    pub mask_path: Option<String>,
    pub domain: Domain,
    pub split: Split,
    /// Mask exists on disk for evaluation but must not reach the trainer.
    pub mask_held_out: bool,
}

impl ManifestEntry {
    pub fn meta(&self) -> SliceMeta {
        SliceMeta::new(self.patient_id.clone(), self.slice_index, self.domain)
    }

    pub fn id(&self) -> String {
        self.meta().id()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub source_patients: usize,
    pub source_slices: usize,
    pub target_train_patients: usize,
    pub target_train_slices: usize,
    pub target_test_patients: usize,
    pub target_test_slices: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub counts: DatasetCounts,
}

fn domain_rank(d: Domain) -> u8 {
    match d {
        Domain::Source => 0,
        Domain::Target => 1,
        Domain::Transferred => 2,
    }
}

impl DatasetManifest {
    /// Sorts entries, sets held-out flags on target-train masks and
    /// recomputes counts.
    pub fn finalize(&mut self) {
        self.entries.sort_by(|a, b| {
            (domain_rank(a.domain), &a.patient_id, a.slice_index)
                .cmp(&(domain_rank(b.domain), &b.patient_id, b.slice_index))
        });
        for e in &mut self.entries {
            e.mask_held_out = e.domain == Domain::Target && e.split == Split::Train && e.mask_path.is_some();
        }
        self.counts = self.compute_counts();
    }

    pub fn compute_counts(&self) -> DatasetCounts {
        let mut c = DatasetCounts::default();
        let mut patients: [BTreeSet<&str>; 3] = Default::default();
        for e in &self.entries {
            let k = match (e.domain, e.split) {
                (Domain::Target, Split::Train) => 1,
                (Domain::Target, Split::Test) => 2,
                _ => 0,
            };
            patients[k].insert(&e.patient_id);
            match k {
                0 => c.source_slices += 1,
                1 => c.target_train_slices += 1,
                _ => c.target_test_slices += 1,
            }
        }
        c.source_patients = patients[0].len();
        c.target_train_patients = patients[1].len();
        c.target_test_patients = patients[2].len();
        c
    }

    /// No patient may appear on both sides of the split within a domain.
    pub fn check_patient_split(&self) -> Result<()> {
        let mut seen: BTreeMap<(u8, &str), Split> = BTreeMap::new();
        for e in &self.entries {
            let key = (domain_rank(e.domain), e.patient_id.as_str());
            if let Some(prev) = seen.insert(key, e.split) {
                if prev != e.split {
                    return Err(Error::InvalidInput(format!(
                        "patient {} appears in both train and test",
                        e.patient_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        m.check_patient_split()?;
        Ok(m)
    }

    pub fn select(&self, domain: Domain, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries
            .iter()
            .filter(move |e| e.domain == domain && e.split == split)
    }
}

/// Assigns whole patients to train, in seeded shuffled order, until the
/// train share of slices first reaches `train_frac`. The rest are test.
pub fn patient_split(manifest: &DatasetManifest, train_frac: f64, seed: u64) -> Result<DatasetManifest> {
    if !(train_frac > 0.0 && train_frac <= 1.0) {
        return Err(Error::InvalidConfig(format!("train_frac must be in (0, 1], got {train_frac}")));
    }
    let mut per_patient: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &manifest.entries {
        *per_patient.entry(e.patient_id.as_str()).or_default() += 1;
    }
    if per_patient.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "patient split needs at least 2 patients, got {}",
            per_patient.len()
        )));
    }
    let total = manifest.entries.len() as f64;
    let mut order: Vec<(&str, usize)> = per_patient.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = BTreeSet::new();
    let mut taken = 0usize;
    for (pid, n) in order {
        if taken as f64 / total >= train_frac {
            break;
        }
        train.insert(pid.to_string());
        taken += n;
    }
    let mut out = manifest.clone();
    for e in &mut out.entries {
        e.split = if train.contains(&e.patient_id) { Split::Train } else { Split::Test };
    }
    out.finalize();
    Ok(out)
}

/// Manifest entry with the conventional file layout
/// `<domain>/<patient>/<index>.pgm` and `<index>_mask.pgm`.
pub fn entry_for(meta: &SliceMeta, has_mask: bool) -> ManifestEntry {
    let stem = format!("{}/{}/{:04}", meta.domain, meta.patient_id, meta.slice_index);
    ManifestEntry {
        patient_id: meta.patient_id.clone(),
        slice_index: meta.slice_index,
        slice_path: format!("{stem}.pgm"),
        mask_path: has_mask.then(|| format!("{stem}_mask.pgm")),
        domain: meta.domain,
        split: Split::Train,
        mask_held_out: false,
    }
}

/// Writes slice and mask graymaps under a root directory and collects
/// manifest entries for them.
#[derive(Debug)]
pub struct ManifestWriter {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl ManifestWriter {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, slice: &Slice, mask: Option<&MaskSlice>) -> Result<()> {
        let entry = entry_for(&slice.meta, mask.is_some());
        pgm::write_slice(&self.root.join(&entry.slice_path), slice)?;
        if let (Some(mask), Some(p)) = (mask, &entry.mask_path) {
            pgm::write_mask(&self.root.join(p), mask)?;
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn finish(self) -> DatasetManifest {
        let mut m = DatasetManifest {
            entries: self.entries,
            counts: DatasetCounts::default(),
        };
        m.finalize();
        m
    }
}

/// A manifest bound to the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(Self { root, manifest })
    }

    pub fn load_slice(&self, e: &ManifestEntry) -> Result<Slice> {
        pgm::read_slice(&self.root.join(&e.slice_path), e.meta())
    }

    /// Fails with [`Error::HeldOutMask`] for masks the trainer must not see.
    pub fn load_mask(&self, e: &ManifestEntry) -> Result<MaskSlice> {
        if e.mask_held_out {
            return Err(Error::HeldOutMask(e.id()));
        }
        self.load_mask_unguarded(e)
    }

    fn load_mask_unguarded(&self, e: &ManifestEntry) -> Result<MaskSlice> {
        let rel = e
            .mask_path
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("no mask recorded for {}", e.id())))?;
        let path = self.root.join(rel);
        let m = pgm::read_mask(&path)?;
        Ok(m)
    }

    fn pairs(&self, domain: Domain, split: Split) -> Result<Vec<(Slice, MaskSlice)>> {
        self.manifest
            .select(domain, split)
            .map(|e| Ok((self.load_slice(e)?, self.load_mask(e)?)))
            .collect()
    }

    /// Labeled source slices.
    pub fn source_train(&self) -> Result<Vec<(Slice, MaskSlice)>> {
        self.pairs(Domain::Source, Split::Train)
    }

    /// Unlabeled target training slices; masks are never read.
    pub fn target_train(&self) -> Result<Vec<Slice>> {
        self.manifest
            .select(Domain::Target, Split::Train)
            .map(|e| self.load_slice(e))
            .collect()
    }

    pub fn target_test(&self) -> Result<Vec<(Slice, MaskSlice)>> {
        self.pairs(Domain::Target, Split::Test)
    }

    /// Checks that every referenced file exists and parses.
    pub fn validate_files(&self) -> Result<()> {
        for e in &self.manifest.entries {
            self.load_slice(e)?;
            if e.mask_path.is_some() {
                self.load_mask_unguarded(e)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fake(patients: &[(&str, usize)]) -> DatasetManifest {
        let mut m = DatasetManifest::default();
        for (p, n) in patients {
            for k in 0..*n {
                m.entries.push(ManifestEntry {
                    patient_id: p.to_string(),
                    slice_index: k as u32,
                    slice_path: format!("{p}/{k}.pgm"),
                    mask_path: Some(format!("{p}/{k}_mask.pgm")),
                    domain: Domain::Target,
                    split: Split::Train,
                    mask_held_out: false,
                });
            }
        }
        m.finalize();
        m
    }

    #[test]
    fn ten_equal_patients_split_seven_three() {
        let names: Vec<String> = (0..10).map(|k| format!("p{k}")).collect();
        let pats: Vec<(&str, usize)> = names.iter().map(|n| (n.as_str(), 4)).collect();
        let s = patient_split(&fake(&pats), 0.7, 11).unwrap();
        assert_eq!(s.counts.target_train_patients, 7);
        assert_eq!(s.counts.target_test_patients, 3);
        assert_eq!(s, patient_split(&fake(&pats), 0.7, 11).unwrap());
        let all = patient_split(&fake(&pats), 1.0, 11).unwrap();
        assert_eq!(all.counts.target_test_slices, 0);
        assert!(all.entries.iter().all(|e| e.mask_held_out));
    }

    #[test]
    fn split_rejects_single_patient_and_bad_fraction() {
        assert!(matches!(patient_split(&fake(&[("a", 3)]), 0.7, 0), Err(Error::InvalidConfig(_))));
        assert!(patient_split(&fake(&[("a", 3), ("b", 1)]), 0.0, 0).is_err());
    }

    #[test]
    fn held_out_mask_is_refused() {
        let ds = Dataset {
            root: PathBuf::from("/nonexistent"),
            manifest: patient_split(&fake(&[("a", 2), ("b", 2)]), 0.5, 3).unwrap(),
        };
        let e = ds.manifest.select(Domain::Target, Split::Train).next().unwrap();
        assert!(matches!(ds.load_mask(e), Err(Error::HeldOutMask(_))));
    }

    #[test]
    fn mixed_patient_is_rejected() {
        let mut m = fake(&[("a", 2)]);
        m.entries[1].split = Split::Test;
        assert!(m.check_patient_split().is_err());
    }

    proptest! {
        #[test]
        fn split_is_disjoint(sizes in proptest::collection::vec(1usize..6, 2..12), frac in 0.05f64..1.0, seed: u64) {
            let names: Vec<String> = (0..sizes.len()).map(|k| format!("p{k}")).collect();
            let pats: Vec<(&str, usize)> = names.iter().map(|n| n.as_str()).zip(sizes.iter().copied()).collect();
            let s = patient_split(&fake(&pats), frac, seed).unwrap();
            prop_assert!(s.check_patient_split().is_ok());
            let total = s.entries.len() as f64;
            prop_assert!(s.counts.target_train_slices as f64 / total >= frac - 1e-12);
        }
    }
}
