//! Image slices, binary masks and their identity metadata.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest edge length accepted for a [`Slice`].
pub const MIN_EDGE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
    Transferred,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Domain::Source => "source",
            Domain::Target => "target",
            Domain::Transferred => "transferred",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceMeta {
    pub patient_id: String,
    pub slice_index: u32,
    pub domain: Domain,
}

impl SliceMeta {
    pub fn new(patient_id: impl Into<String>, slice_index: u32, domain: Domain) -> Self {
        Self {
            patient_id: patient_id.into(),
            slice_index,
            domain,
        }
    }

    /// `"<patient>/<index>"`, used as the slice id in reports.
    pub fn id(&self) -> String {
        format!("{}/{}", self.patient_id, self.slice_index)
    }
}

/// Single-channel image with pixels in `[0, 1]`.
///
/// Height and width are even and at least [`MIN_EDGE`].
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pixels: Array2<f64>,
    pub meta: SliceMeta,
}

impl Slice {
    pub fn new(pixels: Array2<f64>, meta: SliceMeta) -> Result<Self> {
        let (h, w) = pixels.dim();
        check_dims(h, w)?;
        if let Some(v) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidInput(format!(
                "slice pixel {v} outside [0, 1]"
            )));
        }
        Ok(Self { pixels, meta })
    }

    /// Builds a slice by clamping every pixel into `[0, 1]`. Non-finite
    /// pixels are still rejected.
    pub fn from_clamped(mut pixels: Array2<f64>, meta: SliceMeta) -> Result<Self> {
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite pixel".into()));
        }
        pixels.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Self::new(pixels, meta)
    }

    pub fn pixels(&self) -> ArrayView2<'_, f64> {
        self.pixels.view()
    }

    pub fn into_pixels(self) -> Array2<f64> {
        self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn mean(&self) -> f64 {
        self.pixels.mean().unwrap_or(0.0)
    }
}

pub(crate) fn check_dims(h: usize, w: usize) -> Result<()> {
    if h < MIN_EDGE || w < MIN_EDGE || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "slice must be at least {MIN_EDGE}x{MIN_EDGE} with even edges, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Binary lesion mask, one byte per pixel holding 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSlice {
    mask: Array2<u8>,
}

impl MaskSlice {
    pub fn new(mask: Array2<u8>) -> Result<Self> {
        if mask.iter().any(|&v| v > 1) {
            return Err(Error::InvalidInput("mask values must be 0 or 1".into()));
        }
        Ok(Self { mask })
    }

    pub fn from_bools(mask: &Array2<bool>) -> Self {
        Self {
            mask: mask.mapv(u8::from),
        }
    }

    /// Thresholds a probability map: `p >= threshold` is foreground.
    pub fn from_probs(probs: ArrayView2<'_, f64>, threshold: f64) -> Self {
        Self {
            mask: probs.mapv(|p| u8::from(p >= threshold)),
        }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            mask: Array2::zeros((h, w)),
        }
    }

    pub fn view(&self) -> ArrayView2<'_, u8> {
        self.mask.view()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.mask.dim()
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn complement(&self) -> Self {
        Self {
            mask: self.mask.mapv(|v| 1 - v),
        }
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.mask.mapv(f64::from)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> SliceMeta {
        SliceMeta::new("p0", 0, Domain::Source)
    }

    #[test]
    fn rejects_odd_or_small_dims() {
        assert!(Slice::new(Array2::zeros((8, 9)), meta()).is_err());
        assert!(Slice::new(Array2::zeros((6, 6)), meta()).is_err());
        assert!(Slice::new(Array2::zeros((8, 10)), meta()).is_ok());
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        let mut px = Array2::zeros((8, 8));
        px[[2, 3]] = 1.5;
        assert!(Slice::new(px.clone(), meta()).is_err());
        let s = Slice::from_clamped(px, meta()).unwrap();
        assert_eq!(s.pixels()[[2, 3]], 1.0);

        let mut px = Array2::zeros((8, 8));
        px[[0, 0]] = f64::NAN;
        assert!(Slice::from_clamped(px, meta()).is_err());
    }

    #[test]
    fn mask_must_be_binary() {
        let mut m = Array2::<u8>::zeros((4, 4));
        m[[1, 1]] = 2;
        assert!(MaskSlice::new(m).is_err());
        let mut m = Array2::<u8>::zeros((4, 4));
        m[[1, 1]] = 1;
        let m = MaskSlice::new(m).unwrap();
        assert_eq!(m.count(), 1);
        assert_eq!(m.complement().count(), 15);
    }
}
