//! Deterministic 2-D linear projection of feature vectors and a domain
//! separation statistic on the projected points.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

const POWER_ITERS: usize = 1000;
const POWER_TOL: f64 = 1e-13;

/// Mean and top principal directions of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub mean: Array1<f64>,
    /// One unit direction per row.
    pub components: Array2<f64>,
}

impl Projection {
    /// Fits the top `k` principal directions of `rows` by power iteration
    /// with deflation, starting from a fixed vector.
    pub fn fit(rows: &Array2<f64>, k: usize) -> Result<Self> {
        let (n, d) = rows.dim();
        if n < 2 || d == 0 {
            return Err(Error::InsufficientData { needed: 2, got: n });
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("features contain non-finite values".into()));
        }
        let mean = rows.mean_axis(Axis(0)).expect("non-empty");
        let centered = rows - &mean;
        let mut cov = centered.t().dot(&centered) / (n - 1) as f64;
        let mut components = Array2::<f64>::zeros((k.min(d), d));
        for c in 0..k.min(d) {
            let mut v = Array1::from_shape_fn(d, |i| 1.0 + (i as f64 + 1.0).sqrt() * 0.01);
            v /= v.dot(&v).sqrt();
            let mut lambda = 0.0;
            for _ in 0..POWER_ITERS {
                let mut next = cov.dot(&v);
                for prev in components.rows().into_iter().take(c) {
                    let p = next.dot(&prev);
                    next.scaled_add(-p, &prev);
                }
                let norm = next.dot(&next).sqrt();
                if norm < 1e-300 {
                    break;
                }
                next /= norm;
                let delta = (&next - &v).mapv(f64::abs).sum();
                v = next;
                lambda = norm;
                if delta < POWER_TOL {
                    break;
                }
            }
            // Fix the sign so the largest-magnitude entry is positive.
            let pivot = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            if pivot < 0.0 {
                v.mapv_inplace(|x| -x);
            }
            let outer = v
                .view()
                .insert_axis(Axis(1))
                .dot(&v.view().insert_axis(Axis(0)));
            cov.scaled_add(-lambda, &outer);
            components.row_mut(c).assign(&v);
        }
        Ok(Self { mean, components })
    }

    pub fn apply(&self, rows: &Array2<f64>) -> Array2<f64> {
        (rows - &self.mean).dot(&self.components.t())
    }
}

/// Stacks feature vectors into rows.
pub fn to_matrix(features: &[Vec<f64>]) -> Result<Array2<f64>> {
    let d = features.first().map_or(0, Vec::len);
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::InvalidInput("feature vectors differ in length".into()));
    }
    let flat: Vec<f64> = features.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((features.len(), d), flat).expect("lengths checked"))
}

/// Projected points of both domains plus the separation statistic.
#[derive(Debug, Clone)]
pub struct DomainProjection {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub separation: f64,
}

/// Centroid distance between two point sets divided by the pooled RMS
/// distance of points to their own centroid.
pub fn separation(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let ca = a.mean_axis(Axis(0)).expect("non-empty");
    let cb = b.mean_axis(Axis(0)).expect("non-empty");
    let between = (&ca - &cb).mapv(|x| x * x).sum().sqrt();
    let within = (a - &ca).mapv(|x| x * x).sum() + (b - &cb).mapv(|x| x * x).sum();
    let spread = (within / (a.nrows() + b.nrows()) as f64).sqrt();
    if spread == 0.0 {
        return Ok(if between == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(between / spread)
}

/// Fits a 2-D projection on the union of both feature sets and measures
/// how far apart the domains lie in it.
pub fn project_domains(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<DomainProjection> {
    let (ma, mb) = (to_matrix(a)?, to_matrix(b)?);
    if ma.ncols() != mb.ncols() {
        return Err(Error::shape(ma.ncols(), mb.ncols()));
    }
    let all = ndarray::concatenate(Axis(0), &[ma.view(), mb.view()]).expect("same width");
    let proj = Projection::fit(&all, 2)?;
    let (pa, pb) = (proj.apply(&ma), proj.apply(&mb));
    let separation = separation(&pa, &pb)?;
    Ok(DomainProjection {
        a: pa,
        b: pb,
        separation,
    })
}
