//! Dense kernels for the encoder-decoder: im2col convolution, 2x2 max
//! pooling and nearest-neighbour upsampling, each with its adjoint.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array3, ArrayView2, ArrayViewMut2};

/// Unfolds a `(C, H, W)` map into `(C * k * k, H * W)` columns for a
/// stride-1 convolution with zero padding `k / 2`.
pub(crate) fn im2col(input: &Array3<f64>, k: usize) -> Array2<f64> {
    let (c, h, w) = input.dim();
    let src = input
        .as_slice()
        .expect("feature maps are kept in standard layout");
    let hw = h * w;
    if k == 1 {
        return Array2::from_shape_vec((c, hw), src.to_vec()).expect("shape matches");
    }
    let pad = (k / 2) as isize;
    let mut cols = vec![0.0; c * k * k * hw];
    for ci in 0..c {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let dx = kx as isize - pad;
                let dy = ky as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let drow = &mut cols[row + y * w..row + (y + 1) * w];
                    shift_copy(drow, srow, dx);
                }
            }
        }
    }
    Array2::from_shape_vec((c * k * k, hw), cols).expect("shape matches")
}

/// `dst[x] = src[x + dx]` where in range, untouched elsewhere.
fn shift_copy(dst: &mut [f64], src: &[f64], dx: isize) {
    let w = src.len();
    if dx >= 0 {
        let d = dx as usize;
        dst[..w - d].copy_from_slice(&src[d..]);
    } else {
        let d = (-dx) as usize;
        dst[d..].copy_from_slice(&src[..w - d]);
    }
}

/// `dst[x + dx] += src[x]`, the adjoint of [`shift_copy`].
fn shift_add(dst: &mut [f64], src: &[f64], dx: isize) {
    let w = src.len();
    if dx >= 0 {
        let d = dx as usize;
        for (o, i) in dst[d..].iter_mut().zip(&src[..w - d]) {
            *o += *i;
        }
    } else {
        let d = (-dx) as usize;
        for (o, i) in dst[..w - d].iter_mut().zip(&src[d..]) {
            *o += *i;
        }
    }
}

/// Folds column gradients back onto a `(C, H, W)` map.
pub(crate) fn col2im(cols: &Array2<f64>, c: usize, h: usize, w: usize, k: usize) -> Array3<f64> {
    let hw = h * w;
    let src = cols.as_slice().expect("standard layout");
    if k == 1 {
        return Array3::from_shape_vec((c, h, w), src.to_vec()).expect("shape matches");
    }
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; c * hw];
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let dx = kx as isize - pad;
                let dy = ky as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let srow = &src[row + y * w..row + (y + 1) * w];
                    let drow = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    shift_add(drow, srow, dx);
                }
            }
        }
    }
    Array3::from_shape_vec((c, h, w), out).expect("shape matches")
}

/// `weight (Cout, Cin*k*k) x cols + bias`, reshaped to `(Cout, H, W)`.
pub(crate) fn conv_apply(
    weight: ArrayView2<'_, f64>,
    bias: &[f64],
    cols: &Array2<f64>,
    h: usize,
    w: usize,
) -> Array3<f64> {
    let cout = weight.nrows();
    let mut out = Array2::<f64>::zeros((cout, h * w));
    for (mut row, &b) in out.rows_mut().into_iter().zip(bias) {
        row.fill(b);
    }
    general_mat_mul(1.0, &weight, cols, 1.0, &mut out);
    out.into_shape_with_order((cout, h, w))
        .expect("shape matches")
}

/// Accumulates weight and bias gradients; returns column gradients when
/// `want_input` is set.
pub(crate) fn conv_adjoint(
    weight: ArrayView2<'_, f64>,
    cols: &Array2<f64>,
    dout: &Array3<f64>,
    mut dweight: ArrayViewMut2<'_, f64>,
    dbias: &mut [f64],
    want_input: bool,
) -> Option<Array2<f64>> {
    let (cout, h, w) = dout.dim();
    let d2 = dout
        .view()
        .into_shape_with_order((cout, h * w))
        .expect("standard layout");
    general_mat_mul(1.0, &d2, &cols.t(), 1.0, &mut dweight);
    for (db, row) in dbias.iter_mut().zip(d2.rows()) {
        *db += row.sum();
    }
    want_input.then(|| {
        let mut dcols = Array2::<f64>::zeros(cols.dim());
        general_mat_mul(1.0, &weight.t(), &d2, 0.0, &mut dcols);
        dcols
    })
}

pub(crate) fn relu_inplace(x: &mut Array3<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes `grad` where the ReLU output was not positive.
pub(crate) fn relu_adjoint(grad: &mut Array3<f64>, out: &Array3<f64>) {
    ndarray::Zip::from(grad).and(out).for_each(|g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
}

/// 2x2 max pooling; returns the pooled map and the flat input index of
/// each selected element.
pub(crate) fn maxpool2(input: &Array3<f64>) -> (Array3<f64>, Vec<usize>) {
    let (c, h, w) = input.dim();
    let (oh, ow) = (h / 2, w / 2);
    let src = input.as_slice().expect("standard layout");
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * w + 2 * x;
                for cand in [
                    base + 2 * y * w + 2 * x + 1,
                    base + (2 * y + 1) * w + 2 * x,
                    base + (2 * y + 1) * w + 2 * x + 1,
                ] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                out.push(src[best]);
                idx.push(best);
            }
        }
    }
    (
        Array3::from_shape_vec((c, oh, ow), out).expect("shape matches"),
        idx,
    )
}

pub(crate) fn maxpool2_adjoint(grad: &Array3<f64>, idx: &[usize], in_dim: (usize, usize, usize)) -> Array3<f64> {
    let mut out = Array3::<f64>::zeros(in_dim);
    let dst = out.as_slice_mut().expect("standard layout");
    for (g, &i) in grad.iter().zip(idx) {
        dst[i] += *g;
    }
    out
}

pub(crate) fn upsample2(input: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = input.dim();
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(ci, y, x)| input[[ci, y / 2, x / 2]])
}

pub(crate) fn upsample2_adjoint(grad: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = grad.dim();
    let mut out = Array3::<f64>::zeros((c, h / 2, w / 2));
    for ((ci, y, x), g) in grad.indexed_iter() {
        out[[ci, y / 2, x / 2]] += *g;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand3(dim: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct zero-padded 3x3 convolution.
    fn conv_oracle(input: &Array3<f64>, weight: &[f64], bias: &[f64], cout: usize) -> Array3<f64> {
        let (cin, h, w) = input.dim();
        Array3::from_shape_fn((cout, h, w), |(o, y, x)| {
            let mut acc = bias[o];
            for i in 0..cin {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        let sx = x as isize + kx as isize - 1;
                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            continue;
                        }
                        acc += weight[((o * cin + i) * 3 + ky) * 3 + kx]
                            * input[[i, sy as usize, sx as usize]];
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_matches_direct_loop() {
        let input = rand3((3, 6, 8), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let weight: Vec<f64> = (0..5 * 3 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cols = im2col(&input, 3);
        let wv = ArrayView2::from_shape((5, 27), &weight).unwrap();
        let out = conv_apply(wv, &bias, &cols, 6, 8);
        let oracle = conv_oracle(&input, &weight, &bias, 5);
        for (a, b) in out.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let x = rand3((2, 5, 4), 3);
        let cols = im2col(&x, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = Array2::from_shape_fn(cols.dim(), |_| rng.random_range(-1.0..1.0));
        let lhs: f64 = cols.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let back = col2im(&y, 2, 5, 4, 3);
        let rhs: f64 = x.iter().zip(back.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pool_and_upsample_adjoints() {
        let x = rand3((2, 4, 6), 5);
        let (p, idx) = maxpool2(&x);
        assert_eq!(p.dim(), (2, 2, 3));
        assert_eq!(p[[1, 1, 2]], x[[1, 2, 4]].max(x[[1, 2, 5]]).max(x[[1, 3, 4]]).max(x[[1, 3, 5]]));
        let g = rand3(p.dim(), 6);
        let back = maxpool2_adjoint(&g, &idx, x.dim());
        let lhs: f64 = p.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(back.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let u = upsample2(&p);
        let gu = rand3(u.dim(), 7);
        let back = upsample2_adjoint(&gu);
        let lhs: f64 = u.iter().zip(gu.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = p.iter().zip(back.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
