//! Training objectives and their gradients w.r.t. the probability map.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slice::MaskSlice;

/// Probabilities are clamped to `[ENTROPY_CLAMP, 1 - ENTROPY_CLAMP]`
/// before taking logarithms.
pub const ENTROPY_CLAMP: f64 = 1e-7;

/// Scalar loss together with its per-pixel gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyForm {
    /// `-[p ln p + (1 - p) ln(1 - p)]`
    #[default]
    BinaryFull,
    /// `-p ln p`
    PositiveOnly,
}

/// `1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps)`.
pub fn dice_loss(pred: ArrayView2<'_, f64>, gt: &MaskSlice, eps: f64) -> Result<LossGrad> {
    if pred.dim() != gt.dim() {
        return Err(Error::shape(gt.dim(), pred.dim()));
    }
    let g = gt.view();
    let (mut inter, mut sp, mut sg) = (0.0, 0.0, 0.0);
    Zip::from(&pred).and(&g).for_each(|&p, &gv| {
        let gv = f64::from(gv);
        inter += p * gv;
        sp += p;
        sg += gv;
    });
    let num = 2.0 * inter + eps;
    let den = sp + sg + eps;
    if den == 0.0 {
        // eps = 0 with empty prediction and empty mask: perfect agreement.
        return Ok(LossGrad {
            value: 0.0,
            grad: Array2::zeros(pred.dim()),
        });
    }
    let value = 1.0 - num / den;
    let den2 = den * den;
    let grad = g.mapv(|gv| -(2.0 * f64::from(gv) * den - num) / den2);
    Ok(LossGrad { value, grad })
}

/// Squared difference between the student map and the (warped) teacher
/// map; the gradient is taken w.r.t. the student map only.
pub fn consistency_loss(
    student: ArrayView2<'_, f64>,
    teacher: ArrayView2<'_, f64>,
    reduction: Reduction,
) -> Result<LossGrad> {
    if student.dim() != teacher.dim() {
        return Err(Error::shape(student.dim(), teacher.dim()));
    }
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / student.len() as f64,
    };
    let diff = &student - &teacher;
    let value = diff.iter().map(|d| d * d).sum::<f64>() * scale;
    let grad = diff.mapv(|d| 2.0 * d * scale);
    Ok(LossGrad { value, grad })
}

/// Pixel-mean prediction entropy.
pub fn entropy_loss(pred: ArrayView2<'_, f64>, form: EntropyForm) -> LossGrad {
    let n = pred.len() as f64;
    let lo = ENTROPY_CLAMP;
    let hi = 1.0 - ENTROPY_CLAMP;
    let mut value = 0.0;
    let grad = pred.mapv(|p| {
        let inside = p > lo && p < hi;
        let q = p.clamp(lo, hi);
        let (h, dh) = match form {
            EntropyForm::BinaryFull => (
                -(q * q.ln() + (1.0 - q) * (1.0 - q).ln()),
                ((1.0 - q) / q).ln(),
            ),
            EntropyForm::PositiveOnly => (-q * q.ln(), -(q.ln() + 1.0)),
        };
        value += h;
        if inside {
            dh / n
        } else {
            0.0
        }
    });
    LossGrad {
        value: value / n,
        grad,
    }
}
