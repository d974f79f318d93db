//! Seeded elastic deformation.
//!
//! A displacement field is drawn from i.i.d. uniform noise, smoothed with a
//! separable Gaussian and rescaled so its largest component equals the
//! requested magnitude. Images are resampled by backward warping with edge
//! clamping.

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticParams {
    /// Gaussian smoothing width in pixels.
    pub grid_sigma: f64,
    /// Largest displacement in pixels.
    pub magnitude: f64,
    pub seed: u64,
}

impl ElasticParams {
    /// `grid_sigma = h / 8`, `magnitude = h / 32`.
    pub fn default_for(h: usize, seed: u64) -> Self {
        Self {
            grid_sigma: h as f64 / 8.0,
            magnitude: h as f64 / 32.0,
            seed,
        }
    }

    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        if !(self.grid_sigma.is_finite() && self.grid_sigma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "grid_sigma must be positive, got {}",
                self.grid_sigma
            )));
        }
        let limit = h.min(w) as f64 / 4.0;
        if !(self.magnitude.is_finite() && self.magnitude >= 0.0 && self.magnitude < limit) {
            return Err(Error::InvalidConfig(format!(
                "magnitude must lie in [0, {limit}), got {}",
                self.magnitude
            )));
        }
        Ok(())
    }
}

/// Per-pixel displacement; `dx` runs along columns, `dy` along rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub dx: Array2<f64>,
    pub dy: Array2<f64>,
}

impl DisplacementField {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            dx: Array2::zeros((h, w)),
            dy: Array2::zeros((h, w)),
        }
    }

    pub fn uniform(h: usize, w: usize, dx: f64, dy: f64) -> Self {
        Self {
            dx: Array2::from_elem((h, w), dx),
            dy: Array2::from_elem((h, w), dy),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.dx.dim()
    }

    pub fn max_abs(&self) -> f64 {
        self.dx
            .iter()
            .chain(self.dy.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Bilinear,
    Nearest,
}

fn gaussian_kernel(sigma: f64) -> Array1<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k = Array1::from_shape_fn((2 * radius + 1) as usize, |i| {
        let x = (i as i64 - radius) as f64;
        (-0.5 * x * x / (sigma * sigma)).exp()
    });
    let sum = k.sum();
    k /= sum;
    k
}

fn smooth_separable(field: &Array2<f64>, kernel: &Array1<f64>) -> Array2<f64> {
    let (h, w) = field.dim();
    let r = (kernel.len() / 2) as i64;
    let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let rows = Array2::from_shape_fn((h, w), |(y, x)| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, &c)| c * field[[y, clamp(x as i64 + k as i64 - r, w)]])
            .sum::<f64>()
    });
    Array2::from_shape_fn((h, w), |(y, x)| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, &c)| c * rows[[clamp(y as i64 + k as i64 - r, h), x]])
            .sum::<f64>()
    })
}

/// Draws the displacement field for `params`; identical inputs give
/// bitwise-identical fields.
pub fn make_displacement(h: usize, w: usize, params: &ElasticParams) -> Result<DisplacementField> {
    params.validate(h, w)?;
    if params.magnitude == 0.0 {
        return Ok(DisplacementField::zeros(h, w));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let dx = Array2::from_shape_fn((h, w), |_| rng.random_range(-1.0..=1.0));
    let dy = Array2::from_shape_fn((h, w), |_| rng.random_range(-1.0..=1.0));
    let kernel = gaussian_kernel(params.grid_sigma);
    let mut field = DisplacementField {
        dx: smooth_separable(&dx, &kernel),
        dy: smooth_separable(&dy, &kernel),
    };
    let peak = field.max_abs();
    if peak > 0.0 {
        let m = params.magnitude;
        // (v / peak) * m maps the peak to exactly m.
        field.dx.mapv_inplace(|v| (v / peak) * m);
        field.dy.mapv_inplace(|v| (v / peak) * m);
    }
    Ok(field)
}

/// Backward warp: `out[p] = image(p + d(p))`, edge-clamped.
pub fn warp(
    image: ArrayView2<'_, f64>,
    field: &DisplacementField,
    interp: Interp,
) -> Result<Array2<f64>> {
    if image.dim() != field.dim() {
        return Err(Error::shape(image.dim(), field.dim()));
    }
    let (h, w) = image.dim();
    let max_y = (h - 1) as f64;
    let max_x = (w - 1) as f64;
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        let sy = (y as f64 + field.dy[[y, x]]).clamp(0.0, max_y);
        let sx = (x as f64 + field.dx[[y, x]]).clamp(0.0, max_x);
        match interp {
            Interp::Nearest => image[[sy.round() as usize, sx.round() as usize]],
            Interp::Bilinear => {
                let y0 = sy.floor() as usize;
                let x0 = sx.floor() as usize;
                let fy = sy - y0 as f64;
                let fx = sx - x0 as f64;
                let y1 = (y0 + 1).min(h - 1);
                let x1 = (x0 + 1).min(w - 1);
                let top = (1.0 - fx) * image[[y0, x0]] + fx * image[[y0, x1]];
                let bottom = (1.0 - fx) * image[[y1, x0]] + fx * image[[y1, x1]];
                (1.0 - fy) * top + fy * bottom
            }
        }
    }))
}

/// Nearest-neighbour warp of a binary mask; output stays binary.
pub fn warp_mask(mask: ArrayView2<'_, u8>, field: &DisplacementField) -> Result<Array2<u8>> {
    let as_f = mask.mapv(f64::from);
    Ok(warp(as_f.view(), field, Interp::Nearest)?.mapv(|v| v as u8))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;

    fn params(seed: u64) -> ElasticParams {
        ElasticParams {
            grid_sigma: 4.0,
            magnitude: 2.0,
            seed,
        }
    }

    fn random_image(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| rng.random::<f64>())
    }

    #[test]
    fn zero_magnitude_gives_zero_field() {
        let p = ElasticParams {
            magnitude: 0.0,
            ..params(1)
        };
        let f = make_displacement(16, 16, &p).unwrap();
        assert_eq!(f.max_abs(), 0.0);
    }

    #[test]
    fn displacement_is_deterministic() {
        let a = make_displacement(16, 16, &params(7)).unwrap();
        let b = make_displacement(16, 16, &params(7)).unwrap();
        assert_eq!(a, b);
        let c = make_displacement(16, 16, &params(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rescale_hits_magnitude_exactly() {
        let f = make_displacement(16, 16, &params(7)).unwrap();
        assert_eq!(f.max_abs(), 2.0);
    }

    #[test]
    fn rejects_folding_magnitude() {
        let p = ElasticParams {
            magnitude: 4.0,
            ..params(1)
        };
        assert!(make_displacement(16, 16, &p).is_err());
    }

    #[test]
    fn identity_warp() {
        let img = random_image(8, 8, 3);
        let zero = DisplacementField::zeros(8, 8);
        assert_eq!(warp(img.view(), &zero, Interp::Nearest).unwrap(), img);
        let bil = warp(img.view(), &zero, Interp::Bilinear).unwrap();
        assert!(bil.iter().zip(img.iter()).all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn constant_image_is_preserved() {
        let img = Array2::from_elem((16, 16), 0.42);
        let f = make_displacement(16, 16, &params(2)).unwrap();
        for interp in [Interp::Bilinear, Interp::Nearest] {
            let out = warp(img.view(), &f, interp).unwrap();
            assert!(out.iter().all(|v| (v - 0.42).abs() < 1e-15));
        }
    }

    #[test]
    fn unit_shift_reads_right_neighbour() {
        let ramp = Array2::from_shape_fn((4, 4), |(y, x)| (4 * y + x) as f64);
        let f = DisplacementField::uniform(4, 4, 1.0, 0.0);
        let out = warp(ramp.view(), &f, Interp::Bilinear).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(out[[y, x]], ramp[[y, (x + 1).min(3)]]);
            }
        }
    }

    #[test]
    fn mask_warp_stays_binary() {
        let mut m = Array2::<u8>::zeros((16, 16));
        m.slice_mut(ndarray::s![4..10, 5..12]).fill(1);
        let f = make_displacement(16, 16, &params(5)).unwrap();
        let out = warp_mask(m.view(), &f).unwrap();
        assert!(out.iter().all(|&v| v <= 1));
        assert!(out.iter().any(|&v| v == 1));
    }

    #[test]
    fn warp_rejects_mismatched_field() {
        let img = Array2::zeros((8, 8));
        let f = DisplacementField::zeros(8, 10);
        assert!(warp(img.view(), &f, Interp::Bilinear).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn bilinear_stays_within_image_range(seed in any::<u64>(), fseed in any::<u64>()) {
            let img = random_image(16, 16, seed);
            let f = make_displacement(16, 16, &params(fseed)).unwrap();
            let out = warp(img.view(), &f, Interp::Bilinear).unwrap();
            let lo = img.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        }

        #[test]
        fn bilinear_commutes_with_affine_maps(
            seed in any::<u64>(), fseed in any::<u64>(), a in -3.0f64..3.0, b in -2.0f64..2.0
        ) {
            let img = random_image(16, 16, seed);
            let f = make_displacement(16, 16, &params(fseed)).unwrap();
            let lhs = warp(img.mapv(|v| a * v + b).view(), &f, Interp::Bilinear).unwrap();
            let rhs = warp(img.view(), &f, Interp::Bilinear).unwrap().mapv(|v| a * v + b);
            prop_assert!(lhs.iter().zip(rhs.iter()).all(|(x, y)| (x - y).abs() < 1e-9));
        }

        #[test]
        fn field_respects_magnitude(seed in any::<u64>(), mag in 0.0f64..3.9) {
            let p = ElasticParams { grid_sigma: 2.0, magnitude: mag, seed };
            let f = make_displacement(16, 16, &p).unwrap();
            prop_assert!(f.max_abs() <= mag);
        }
    }
}
