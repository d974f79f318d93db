//! Overlap metrics, confidence intervals and boxplot summaries.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::slice::MaskSlice;

/// Probability threshold used to binarize predictions for evaluation.
pub const EVAL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

pub fn confusion(pred: &MaskSlice, gt: &MaskSlice) -> Result<Confusion> {
    confusion_raw(pred.view(), gt.view())
}

fn confusion_raw(pred: ArrayView2<u8>, gt: ArrayView2<u8>) -> Result<Confusion> {
    if pred.dim() != gt.dim() {
        return Err(Error::shape(gt.dim(), pred.dim()));
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        match (p != 0, g != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `2TP / (2TP + FP + FN)`; 1.0 when both masks are empty.
pub fn dice_score(c: &Confusion) -> f64 {
    let den = 2 * c.tp + c.fp + c.fn_;
    if den == 0 {
        return 1.0;
    }
    (2 * c.tp) as f64 / den as f64
}

/// `TP / (TP + FN)`. Without ground-truth positives: 1.0 if the prediction
/// is empty too, else 0.0.
pub fn sensitivity(c: &Confusion) -> f64 {
    let den = c.tp + c.fn_;
    if den == 0 {
        return if c.fp == 0 { 1.0 } else { 0.0 };
    }
    c.tp as f64 / den as f64
}

/// `TN / (TN + FP)`. Without ground-truth negatives: 1.0 if the prediction
/// has no negatives either, else 0.0.
pub fn specificity(c: &Confusion) -> f64 {
    let den = c.tn + c.fp;
    if den == 0 {
        return if c.fn_ == 0 { 1.0 } else { 0.0 };
    }
    c.tn as f64 / den as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub slice_id: String,
    pub dice: f64,
    pub sen: f64,
    pub spe: f64,
}

impl SliceMetrics {
    pub fn from_confusion(slice_id: impl Into<String>, c: &Confusion) -> Self {
        Self {
            slice_id: slice_id.into(),
            dice: dice_score(c),
            sen: sensitivity(c),
            spe: specificity(c),
        }
    }

    /// Thresholds `probs` at [`EVAL_THRESHOLD`] and scores against `gt`.
    pub fn evaluate(slice_id: impl Into<String>, probs: ArrayView2<f64>, gt: &MaskSlice) -> Result<Self> {
        let pred = MaskSlice::from_probs(probs, EVAL_THRESHOLD);
        Ok(Self::from_confusion(slice_id, &confusion(&pred, gt)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub ci95_half_width: f64,
}

/// Mean and Student-t 95% half-width `t(0.975, n-1) * s / sqrt(n)`.
pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    let t = StudentsT::new(0.0, 1.0, nf - 1.0)
        .map_err(|e| Error::InvalidInput(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(Aggregate {
        mean,
        ci95_half_width: t * var.sqrt() / nf.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Tukey boxplot: whiskers reach the most extreme points within 1.5 IQR.
pub fn boxplot_stats(values: &[f64]) -> Result<BoxplotStats> {
    if values.len() < 4 {
        return Err(Error::InsufficientData {
            needed: 4,
            got: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("boxplot input contains non-finite values".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&s, 0.25);
    let median = quantile_sorted(&s, 0.5);
    let q3 = quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    let (fence_lo, fence_hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = s.iter().copied().filter(|v| (fence_lo..=fence_hi).contains(v));
    // Whiskers never retreat inside the box.
    let whisker_lo = inside.clone().fold(f64::INFINITY, f64::min).min(q1);
    let whisker_hi = inside.fold(f64::NEG_INFINITY, f64::max).max(q3);
    let outliers = s
        .iter()
        .copied()
        .filter(|v| !(fence_lo..=fence_hi).contains(v))
        .collect();
    Ok(BoxplotStats {
        min: s[0],
        q1,
        median,
        q3,
        max: s[s.len() - 1],
        whisker_lo,
        whisker_hi,
        outliers,
    })
}

pub const METRIC_NAMES: [&str; 3] = ["dice", "sen", "spe"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_slice: Vec<SliceMetrics>,
    pub aggregate: BTreeMap<String, Aggregate>,
    /// Present only when there are at least four slices.
    pub boxplot: BTreeMap<String, BoxplotStats>,
}

impl MetricReport {
    pub fn new(per_slice: Vec<SliceMetrics>) -> Result<Self> {
        let mut aggregate_map = BTreeMap::new();
        let mut boxplot = BTreeMap::new();
        for name in METRIC_NAMES {
            let column = metric_column(&per_slice, name);
            aggregate_map.insert(name.to_string(), aggregate(&column)?);
            if column.len() >= 4 {
                boxplot.insert(name.to_string(), boxplot_stats(&column)?);
            }
        }
        Ok(Self {
            per_slice,
            aggregate: aggregate_map,
            boxplot,
        })
    }

    pub fn column(&self, name: &str) -> Vec<f64> {
        metric_column(&self.per_slice, name)
    }

    pub fn write_per_slice_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "slice_id,dice,sen,spe")?;
        for m in &self.per_slice {
            writeln!(out, "{},{},{},{}", m.slice_id, m.dice, m.sen, m.spe)?;
        }
        Ok(())
    }

    /// One row per metric; outliers are `;`-separated.
    pub fn write_boxplot_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "metric,min,q1,median,q3,max,whisker_lo,whisker_hi,outliers")?;
        for (name, b) in &self.boxplot {
            let outliers: Vec<String> = b.outliers.iter().map(|v| v.to_string()).collect();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                name,
                b.min,
                b.q1,
                b.median,
                b.q3,
                b.max,
                b.whisker_lo,
                b.whisker_hi,
                outliers.join(";")
            )?;
        }
        Ok(())
    }
}

fn metric_column(rows: &[SliceMetrics], name: &str) -> Vec<f64> {
    rows.iter()
        .map(|m| match name {
            "dice" => m.dice,
            "sen" => m.sen,
            _ => m.spe,
        })
        .collect()
}

/// Parses a per-slice CSV written by [`MetricReport::write_per_slice_csv`].
pub fn read_per_slice_csv(text: &str) -> Result<Vec<SliceMetrics>> {
    let mut lines = text.lines();
    if lines.next() != Some("slice_id,dice,sen,spe") {
        return Err(Error::InvalidInput("unexpected per-slice CSV header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("bad number in CSV row: {l}")))
            };
            if f.len() != 4 {
                return Err(Error::InvalidInput(format!("bad CSV row: {l}")));
            }
            Ok(SliceMetrics {
                slice_id: f[0].to_string(),
                dice: num(f[1])?,
                sen: num(f[2])?,
                spe: num(f[3])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn mask(bits: &[u8], w: usize) -> MaskSlice {
        MaskSlice::new(Array2::from_shape_vec((bits.len() / w, w), bits.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn confusion_examples() {
        let z = MaskSlice::zeros(4, 4);
        assert_eq!(
            confusion(&z, &z).unwrap(),
            Confusion { tp: 0, fp: 0, tn: 16, fn_: 0 }
        );
        let p = mask(&[1, 1, 0, 0], 2);
        let g = mask(&[1, 0, 1, 0], 2);
        let c = confusion(&p, &g).unwrap();
        assert_eq!(c, Confusion { tp: 1, fp: 1, tn: 1, fn_: 1 });
        assert_eq!(dice_score(&c), 0.5);
        let c = confusion(&g.complement(), &g).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        assert!(confusion(&MaskSlice::zeros(2, 2), &MaskSlice::zeros(4, 2)).is_err());
    }

    #[test]
    fn degenerate_conventions() {
        let empty = Confusion { tn: 4, ..Default::default() };
        assert_eq!(dice_score(&empty), 1.0);
        assert_eq!(sensitivity(&empty), 1.0);
        let missed = Confusion { fn_: 2, tn: 2, ..Default::default() };
        assert_eq!(dice_score(&missed), 0.0);
        assert_eq!(sensitivity(&missed), 0.0);
        let full = Confusion { tp: 3, fn_: 0, fp: 0, tn: 1 };
        assert_eq!(sensitivity(&full), 1.0);
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate(&[0.3; 5]).unwrap();
        assert_eq!(a.ci95_half_width, 0.0);
        let a = aggregate(&[0.0, 1.0]).unwrap();
        assert_eq!(a.mean, 0.5);
        assert!((a.ci95_half_width - 6.353_102_368_087_36).abs() < 1e-6);
        assert!(matches!(aggregate(&[1.0]), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn boxplot_examples() {
        let b = boxplot_stats(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (2.75, 4.5, 6.25));
        assert!(b.outliers.is_empty());
        assert_eq!((b.whisker_lo, b.whisker_hi), (1.0, 8.0));
        let c = boxplot_stats(&[0.4; 6]).unwrap();
        assert!(c.outliers.is_empty());
        assert_eq!(c.min, c.max);
        let d = boxplot_stats(&[0.1, 0.5, 0.9, 0.3, 0.7, 100.0]).unwrap();
        assert_eq!(d.outliers, vec![100.0]);
        assert_eq!(d.whisker_hi, 0.9);
        assert!(boxplot_stats(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn report_csv_round_trip() {
        let rows: Vec<_> = (0..5)
            .map(|k| SliceMetrics {
                slice_id: format!("p/{k}"),
                dice: k as f64 / 7.0,
                sen: 0.5,
                spe: 1.0 - k as f64 / 97.0,
            })
            .collect();
        let report = MetricReport::new(rows.clone()).unwrap();
        let mut buf = Vec::new();
        report.write_per_slice_csv(&mut buf).unwrap();
        let back = read_per_slice_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, rows);
        assert_eq!(MetricReport::new(back).unwrap(), report);
        assert_eq!(report.boxplot.len(), 3);
    }

    fn bits(n: usize) -> impl Strategy<Value = Vec<u8>> {
        proptest::collection::vec(0u8..=1, n)
    }

    proptest! {
        #[test]
        fn dice_self_and_symmetry(a in bits(36), b in bits(36)) {
            let (ma, mb) = (mask(&a, 6), mask(&b, 6));
            if a.iter().any(|&v| v == 1) {
                prop_assert_eq!(dice_score(&confusion(&ma, &ma).unwrap()), 1.0);
            }
            prop_assert_eq!(
                dice_score(&confusion(&ma, &mb).unwrap()),
                dice_score(&confusion(&mb, &ma).unwrap())
            );
        }

        #[test]
        fn complement_duality(a in bits(36), b in bits(36)) {
            let (p, g) = (mask(&a, 6), mask(&b, 6));
            let lhs = sensitivity(&confusion(&p, &g).unwrap());
            let rhs = specificity(&confusion(&p.complement(), &g.complement()).unwrap());
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn confusion_total(a in bits(24), b in bits(24)) {
            prop_assert_eq!(confusion(&mask(&a, 4), &mask(&b, 4)).unwrap().total(), 24);
        }

        #[test]
        fn boxplot_ordering(v in proptest::collection::vec(0.0f64..1.0, 4..40)) {
            let b = boxplot_stats(&v).unwrap();
            prop_assert!(b.min <= b.whisker_lo && b.whisker_lo <= b.q1);
            prop_assert!(b.q1 <= b.median && b.median <= b.q3);
            prop_assert!(b.q3 <= b.whisker_hi && b.whisker_hi <= b.max);
        }
    }
}
