//! Fourier-domain style transfer.
//!
//! A source slice keeps its phase spectrum (spatial structure) while the
//! low-frequency part of its amplitude spectrum is replaced by a target
//! slice's. The forward DFT is unnormalized; the inverse carries the
//! `1 / (H * W)` factor. Spectra are kept unshifted, so the DC bin sits at
//! `(0, 0)` and the low-frequency box wraps around the array edges.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Zip};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::slice::{Domain, Slice, SliceMeta};

/// Complex 2-D field, typically the output of [`fft2`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    data: Array2<Complex64>,
}

impl ComplexField {
    pub fn new(data: Array2<Complex64>) -> Self {
        Self { data }
    }

    pub fn from_parts(real: ArrayView2<'_, f64>, imag: ArrayView2<'_, f64>) -> Result<Self> {
        if real.dim() != imag.dim() {
            return Err(Error::shape(real.dim(), imag.dim()));
        }
        let data = Zip::from(&real)
            .and(&imag)
            .map_collect(|&re, &im| Complex64::new(re, im));
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn real(&self) -> Array2<f64> {
        self.data.mapv(|c| c.re)
    }

    pub fn imag(&self) -> Array2<f64> {
        self.data.mapv(|c| c.im)
    }

    fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput("non-finite spectrum entry".into()))
        }
    }
}

/// Amplitude and phase planes of a complex field.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub amplitude: Array2<f64>,
    /// Values in `(-pi, pi]`.
    pub phase: Array2<f64>,
}

/// Binary low-frequency selector centred on the DC bin.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleMask {
    pub alpha: f64,
    pub mask: Array2<bool>,
}

impl StyleMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn transform_2d(data: &mut Array2<Complex64>, inverse: bool) {
    let (h, w) = data.dim();
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };

    for mut row in data.rows_mut() {
        match row.as_slice_mut() {
            Some(buf) => row_fft.process(buf),
            None => {
                let mut buf = row.to_vec();
                row_fft.process(&mut buf);
                row.assign(&ndarray::ArrayView1::from(&buf));
            }
        }
    }

    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for mut col in data.columns_mut() {
        for (dst, src) in column.iter_mut().zip(col.iter()) {
            *dst = *src;
        }
        col_fft.process(&mut column);
        for (dst, src) in col.iter_mut().zip(column.iter()) {
            *dst = *src;
        }
    }
}

/// Unnormalized forward 2-D DFT of a real plane.
pub fn fft2(plane: ArrayView2<'_, f64>) -> Result<ComplexField> {
    if plane.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite pixel".into()));
    }
    let mut data = plane.mapv(|v| Complex64::new(v, 0.0));
    transform_2d(&mut data, false);
    Ok(ComplexField { data })
}

/// Real part of the normalized inverse DFT, without clamping.
pub fn ifft2_unclamped(field: &ComplexField) -> Result<Array2<f64>> {
    field.check_finite()?;
    let (h, w) = field.dim();
    let mut data = field.data.clone();
    transform_2d(&mut data, true);
    let norm = 1.0 / (h * w) as f64;
    Ok(data.mapv(|c| c.re * norm))
}

/// Inverse DFT realized as an image: real part, clamped into `[0, 1]`.
pub fn ifft2(field: &ComplexField) -> Result<Array2<f64>> {
    let mut out = ifft2_unclamped(field)?;
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(out)
}

pub fn decompose(field: &ComplexField) -> Result<Spectrum> {
    field.check_finite()?;
    let amplitude = field.data.mapv(|c| c.norm());
    let phase = field.data.mapv(|c| {
        let p = c.im.atan2(c.re);
        // atan2(-0.0, x<0) lands on -pi; keep the range half-open at -pi.
        if p <= -PI {
            PI
        } else {
            p
        }
    });
    Ok(Spectrum { amplitude, phase })
}

pub fn compose(spec: &Spectrum) -> Result<ComplexField> {
    if spec.amplitude.dim() != spec.phase.dim() {
        return Err(Error::shape(spec.amplitude.dim(), spec.phase.dim()));
    }
    if spec.amplitude.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(Error::InvalidInput(
            "amplitude must be finite and non-negative".into(),
        ));
    }
    if spec.phase.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput("non-finite phase".into()));
    }
    let data = Zip::from(&spec.amplitude)
        .and(&spec.phase)
        .map_collect(|&a, &p| Complex64::from_polar(a, p));
    Ok(ComplexField { data })
}

/// Maps an unshifted frequency index into `[-n/2, n/2)`.
pub fn signed_frequency(k: usize, n: usize) -> i64 {
    if k < n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Low-frequency box of half-widths `floor(alpha * h)` and
/// `floor(alpha * w)` around DC, in wrap-around coordinates.
pub fn low_freq_mask(h: usize, w: usize, alpha: f64) -> Result<StyleMask> {
    if !(0.0..=0.5).contains(&alpha) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in [0, 0.5], got {alpha}"
        )));
    }
    if h == 0 || w == 0 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "mask dimensions must be even and positive, got {h}x{w}"
        )));
    }
    let half_h = (alpha * h as f64).floor() as i64;
    let half_w = (alpha * w as f64).floor() as i64;
    let mask = Array2::from_shape_fn((h, w), |(u, v)| {
        signed_frequency(u, h).abs() <= half_h && signed_frequency(v, w).abs() <= half_w
    });
    Ok(StyleMask { alpha, mask })
}

/// `mask * a_tgt + (1 - mask) * a_src`, elementwise.
pub fn amplitude_swap(
    a_src: ArrayView2<'_, f64>,
    a_tgt: ArrayView2<'_, f64>,
    mask: &StyleMask,
) -> Result<Array2<f64>> {
    if a_src.dim() != a_tgt.dim() {
        return Err(Error::shape(a_src.dim(), a_tgt.dim()));
    }
    if a_src.dim() != mask.mask.dim() {
        return Err(Error::shape(a_src.dim(), mask.mask.dim()));
    }
    Ok(Zip::from(&a_src)
        .and(&a_tgt)
        .and(&mask.mask)
        .map_collect(|&s, &t, &m| if m { t } else { s }))
}

/// Style transfer on raw planes, returning the real inverse before clamping.
pub fn transfer_style_unclamped(
    src: ArrayView2<'_, f64>,
    tgt: ArrayView2<'_, f64>,
    alpha: f64,
) -> Result<Array2<f64>> {
    if src.dim() != tgt.dim() {
        return Err(Error::shape(src.dim(), tgt.dim()));
    }
    let (h, w) = src.dim();
    let mask = low_freq_mask(h, w, alpha)?;
    let spec_src = decompose(&fft2(src)?)?;
    let spec_tgt = decompose(&fft2(tgt)?)?;
    let amplitude = amplitude_swap(spec_src.amplitude.view(), spec_tgt.amplitude.view(), &mask)?;
    let mixed = compose(&Spectrum {
        amplitude,
        phase: spec_src.phase,
    })?;
    ifft2_unclamped(&mixed)
}

/// Renders `x_src` in the intensity style of `x_tgt`.
///
/// The result carries the source identity with `domain = transferred`.
pub fn transfer_style(x_src: &Slice, x_tgt: &Slice, alpha: f64) -> Result<Slice> {
    let raw = transfer_style_unclamped(x_src.pixels(), x_tgt.pixels(), alpha)?;
    let meta = SliceMeta {
        domain: Domain::Transferred,
        ..x_src.meta.clone()
    };
    Slice::from_clamped(raw, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct double-loop DFT; `sign = -1` forward, `+1` inverse (unnormalized).
    fn dft_oracle(input: &Array2<Complex64>, sign: f64) -> Array2<Complex64> {
        let (h, w) = input.dim();
        Array2::from_shape_fn((h, w), |(u, v)| {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let theta = sign
                        * 2.0
                        * PI
                        * ((y * u) as f64 / h as f64 + (x * v) as f64 / w as f64);
                    acc += input[[y, x]] * Complex64::from_polar(1.0, theta);
                }
            }
            acc
        })
    }

    fn random_plane(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| rng.random::<f64>())
    }

    fn random_field(h: usize, w: usize, seed: u64) -> ComplexField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexField::new(Array2::from_shape_fn((h, w), |_| {
            Complex64::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))
        }))
    }

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        Zip::from(a)
            .and(b)
            .fold(0.0f64, |m, x, y| m.max((x - y).abs()))
    }

    #[test]
    fn fft_of_constant_is_dc_only() {
        let c = 0.37;
        let f = fft2(Array2::from_elem((4, 4), c).view()).unwrap();
        for ((u, v), z) in f.data().indexed_iter() {
            if (u, v) == (0, 0) {
                assert!((z.re - 16.0 * c).abs() < 1e-12);
                assert!(z.im.abs() < 1e-12);
            } else {
                assert!(z.norm() < 1e-12, "bin ({u},{v}) = {z}");
            }
        }
    }

    #[test]
    fn fft_of_impulse_is_flat() {
        let mut x = Array2::zeros((4, 4));
        x[[0, 0]] = 1.0;
        let f = fft2(x.view()).unwrap();
        for z in f.data() {
            assert!((z.re - 1.0).abs() < 1e-12);
            assert!(z.im.abs() < 1e-12);
        }
    }

    #[test]
    fn fft_matches_brute_force_dft() {
        for &(h, w) in &[(8, 8), (4, 6), (16, 16), (16, 8), (2, 2), (10, 12)] {
            let x = random_plane(h, w, (h * 100 + w) as u64);
            let f = fft2(x.view()).unwrap();
            let oracle = dft_oracle(&x.mapv(|v| Complex64::new(v, 0.0)), -1.0);
            for (a, b) in f.data().iter().zip(oracle.iter()) {
                assert!((a - b).norm() < 1e-9, "{h}x{w}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn ifft_matches_brute_force_inverse() {
        for &(h, w) in &[(8, 8), (16, 16), (6, 4)] {
            let f = random_field(h, w, 11 + h as u64);
            let got = ifft2_unclamped(&f).unwrap();
            let oracle = dft_oracle(f.data(), 1.0).mapv(|c| c.re / (h * w) as f64);
            assert!(max_abs_diff(&got, &oracle) < 1e-9);
        }
    }

    #[test]
    fn ifft_of_dc_only_field_is_constant() {
        let c = 0.25;
        let mut data = Array2::from_elem((8, 8), Complex64::new(0.0, 0.0));
        data[[0, 0]] = Complex64::new(64.0 * c, 0.0);
        let x = ifft2(&ComplexField::new(data)).unwrap();
        assert!(x.iter().all(|v| (v - c).abs() < 1e-12));
    }

    #[test]
    fn ifft_clamps_into_unit_range() {
        let mut data = Array2::from_elem((8, 8), Complex64::new(0.0, 0.0));
        data[[0, 0]] = Complex64::new(64.0 * 1.7, 0.0);
        let x = ifft2(&ComplexField::new(data)).unwrap();
        assert!(x.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn fft_rejects_non_finite() {
        let mut x = Array2::zeros((8, 8));
        x[[3, 3]] = f64::INFINITY;
        assert!(matches!(fft2(x.view()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn decompose_three_four_five() {
        let f = ComplexField::new(Array2::from_elem((1, 2), Complex64::new(3.0, 4.0)));
        let s = decompose(&f).unwrap();
        assert_eq!(s.amplitude[[0, 0]], 5.0);
        assert_eq!(s.phase[[0, 0]], 4.0f64.atan2(3.0));
    }

    #[test]
    fn decompose_zero_has_zero_phase() {
        let f = ComplexField::new(Array2::from_elem((2, 2), Complex64::new(0.0, 0.0)));
        let s = decompose(&f).unwrap();
        assert!(s.amplitude.iter().all(|&a| a == 0.0));
        assert!(s.phase.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn decompose_matches_elementwise_oracle() {
        let f = random_field(8, 8, 5);
        let s = decompose(&f).unwrap();
        for ((idx, z), (a, p)) in f
            .data()
            .indexed_iter()
            .zip(s.amplitude.iter().zip(s.phase.iter()))
        {
            let amp = (z.re * z.re + z.im * z.im).sqrt();
            let ph = z.im.atan2(z.re);
            assert!((a - amp).abs() < 1e-12, "{idx:?}");
            assert!((p - ph).abs() < 1e-12, "{idx:?}");
            assert!(*p > -PI && *p <= PI);
        }
    }

    #[test]
    fn phase_range_is_half_open() {
        let f = ComplexField::new(Array2::from_elem((1, 1), Complex64::new(-1.0, -0.0)));
        let s = decompose(&f).unwrap();
        assert_eq!(s.phase[[0, 0]], PI);
    }

    #[test]
    fn compose_examples() {
        let spec = Spectrum {
            amplitude: Array2::from_elem((1, 1), 5.0),
            phase: Array2::from_elem((1, 1), 4.0f64.atan2(3.0)),
        };
        let z = compose(&spec).unwrap().data()[[0, 0]];
        assert!((z.re - 3.0).abs() < 1e-12 && (z.im - 4.0).abs() < 1e-12);

        let spec = Spectrum {
            amplitude: Array2::zeros((1, 1)),
            phase: Array2::from_elem((1, 1), 1.234),
        };
        assert_eq!(compose(&spec).unwrap().data()[[0, 0]].norm(), 0.0);
    }

    #[test]
    fn compose_rejects_negative_amplitude() {
        let spec = Spectrum {
            amplitude: Array2::from_elem((2, 2), -1.0),
            phase: Array2::zeros((2, 2)),
        };
        assert!(matches!(compose(&spec), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn mask_degenerate_and_full() {
        let m = low_freq_mask(8, 8, 0.0).unwrap();
        assert_eq!(m.count(), 1);
        assert!(m.mask[[0, 0]]);
        let m = low_freq_mask(8, 8, 0.5).unwrap();
        assert_eq!(m.count(), 64);
    }

    #[test]
    fn mask_at_default_alpha_on_512() {
        let m = low_freq_mask(512, 512, 0.005).unwrap();
        assert_eq!(m.count(), 25);
        for ((u, v), &on) in m.mask.indexed_iter() {
            let expect = signed_frequency(u, 512).abs() <= 2 && signed_frequency(v, 512).abs() <= 2;
            assert_eq!(on, expect);
        }
        assert!(m.mask[[510, 2]] && m.mask[[2, 510]] && !m.mask[[3, 0]]);
    }

    #[test]
    fn mask_rejects_bad_alpha() {
        assert!(matches!(low_freq_mask(8, 8, 0.51), Err(Error::InvalidConfig(_))));
        assert!(matches!(low_freq_mask(8, 8, -0.1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn swap_endpoints_and_dc_only() {
        let a = random_plane(4, 4, 1);
        let b = random_plane(4, 4, 2);
        let none = StyleMask {
            alpha: 0.0,
            mask: Array2::from_elem((4, 4), false),
        };
        let all = StyleMask {
            alpha: 0.5,
            mask: Array2::from_elem((4, 4), true),
        };
        assert_eq!(amplitude_swap(a.view(), b.view(), &none).unwrap(), a);
        assert_eq!(amplitude_swap(a.view(), b.view(), &all).unwrap(), b);

        let dc = low_freq_mask(4, 4, 0.0).unwrap();
        let out = amplitude_swap(a.view(), b.view(), &dc).unwrap();
        for ((u, v), &x) in out.indexed_iter() {
            let expect = if (u, v) == (0, 0) { b[[u, v]] } else { a[[u, v]] };
            assert_eq!(x, expect);
        }
    }

    #[test]
    fn swap_rejects_mismatched_dims() {
        let a = Array2::zeros((4, 4));
        let b = Array2::zeros((4, 6));
        let m = low_freq_mask(4, 4, 0.1).unwrap();
        assert!(amplitude_swap(a.view(), b.view(), &m).is_err());
    }

    fn slice(x: Array2<f64>, domain: Domain) -> Slice {
        Slice::new(x, SliceMeta::new("p", 0, domain)).unwrap()
    }

    #[test]
    fn self_transfer_is_identity() {
        let x = slice(random_plane(16, 16, 3), Domain::Source);
        for alpha in [0.0, 0.005, 0.1, 0.25, 0.5] {
            let y = transfer_style(&x, &x, alpha).unwrap();
            assert!(max_abs_diff(&y.pixels().to_owned(), &x.pixels().to_owned()) < 1e-6);
            assert_eq!(y.meta.domain, Domain::Transferred);
        }
    }

    #[test]
    fn zero_alpha_transfers_the_mean_only() {
        let src = random_plane(16, 16, 4);
        let tgt = random_plane(16, 16, 5).mapv(|v| 0.5 * v + 0.3);
        let out = transfer_style_unclamped(src.view(), tgt.view(), 0.0).unwrap();
        let shift = tgt.mean().unwrap() - src.mean().unwrap();
        assert!((out.mean().unwrap() - tgt.mean().unwrap()).abs() < 1e-6);
        assert!(max_abs_diff(&out, &src.mapv(|v| v + shift)) < 1e-6);
    }

    #[test]
    fn full_alpha_transfers_whole_amplitude() {
        let src = random_plane(16, 16, 6);
        let tgt = random_plane(16, 16, 7);
        let out = transfer_style_unclamped(src.view(), tgt.view(), 0.5).unwrap();
        let a_out = decompose(&fft2(out.view()).unwrap()).unwrap().amplitude;
        let a_tgt = decompose(&fft2(tgt.view()).unwrap()).unwrap().amplitude;
        assert!(max_abs_diff(&a_out, &a_tgt) < 1e-6);
    }

    #[test]
    fn transfer_keeps_source_phase_and_masked_target_amplitude() {
        let src = random_plane(16, 16, 8);
        let tgt = random_plane(16, 16, 9);
        let alpha = 0.2;
        let out = transfer_style_unclamped(src.view(), tgt.view(), alpha).unwrap();
        let s_out = decompose(&fft2(out.view()).unwrap()).unwrap();
        let s_src = decompose(&fft2(src.view()).unwrap()).unwrap();
        let s_tgt = decompose(&fft2(tgt.view()).unwrap()).unwrap();
        let mask = low_freq_mask(16, 16, alpha).unwrap();
        for ((idx, &m), &a) in mask.mask.indexed_iter().zip(s_out.amplitude.iter()) {
            let expect = if m { s_tgt.amplitude[idx] } else { s_src.amplitude[idx] };
            assert!((a - expect).abs() < 1e-9, "{idx:?}");
            if a > 1e-6 {
                let d = (s_out.phase[idx] - s_src.phase[idx]).rem_euclid(2.0 * PI);
                assert!(d.min(2.0 * PI - d) < 1e-6, "{idx:?}");
            }
        }
    }

    #[test]
    fn transfer_rejects_mismatched_slices() {
        let a = slice(Array2::zeros((8, 8)), Domain::Source);
        let b = slice(Array2::zeros((8, 10)), Domain::Target);
        assert!(matches!(
            transfer_style(&a, &b, 0.1),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn round_trip(seed in any::<u64>(), hh in 4usize..=8, ww in 4usize..=8) {
            let x = random_plane(2 * hh, 2 * ww, seed);
            let back = ifft2(&fft2(x.view()).unwrap()).unwrap();
            prop_assert!(max_abs_diff(&x, &back) < 1e-6);
        }

        #[test]
        fn compose_inverts_decompose(seed in any::<u64>()) {
            let f = random_field(8, 8, seed);
            let g = compose(&decompose(&f).unwrap()).unwrap();
            for (a, b) in f.data().iter().zip(g.data().iter()) {
                prop_assert!((a - b).norm() < 1e-9);
            }
        }

        #[test]
        fn mask_grows_with_alpha(a in 0.0f64..=0.5, b in 0.0f64..=0.5, hh in 4usize..=32) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let n = 2 * hh;
            let m_lo = low_freq_mask(n, n + 2, lo).unwrap();
            let m_hi = low_freq_mask(n, n + 2, hi).unwrap();
            prop_assert!(Zip::from(&m_lo.mask).and(&m_hi.mask).all(|&l, &h| !l || h));
        }

        #[test]
        fn mask_is_symmetric_under_negation(alpha in 0.0f64..=0.5, hh in 4usize..=16) {
            let n = 2 * hh;
            let m = low_freq_mask(n, n, alpha).unwrap();
            for ((u, v), &on) in m.mask.indexed_iter() {
                prop_assert_eq!(on, m.mask[[(n - u) % n, (n - v) % n]]);
            }
        }

        #[test]
        fn transferred_pixels_stay_in_range(s1 in any::<u64>(), s2 in any::<u64>(), alpha in 0.0f64..=0.5) {
            let a = slice(random_plane(8, 8, s1), Domain::Source);
            let b = slice(random_plane(8, 8, s2), Domain::Target);
            let out = transfer_style(&a, &b, alpha).unwrap();
            prop_assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
