//! Portable graymap storage: 16-bit slices, 8-bit masks (0 / 255).

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::slice::{MaskSlice, Slice, SliceMeta};

const U16_MAX: f64 = u16::MAX as f64;

/// Rounds a `[0, 1]` intensity onto the 16-bit storage grid.
pub fn quantize16(v: f64) -> f64 {
    (v * U16_MAX).round() / U16_MAX
}

pub fn write_slice(path: &Path, slice: &Slice) -> Result<()> {
    let (h, w) = slice.dim();
    // The pnm encoder only handles 8-bit graymaps, so the 16-bit header and
    // big-endian samples are written directly.
    let mut bytes = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for &v in slice.pixels().iter() {
        bytes.extend_from_slice(&((v * U16_MAX).round() as u16).to_be_bytes());
    }
    write_file(path, &bytes)
}

pub fn read_slice(path: &Path, meta: SliceMeta) -> Result<Slice> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f64> = match img {
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f64 / U16_MAX).collect(),
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        _ => return Err(Error::format(path, "expected a single-channel graymap")),
    };
    let arr = Array2::from_shape_vec((h, w), pixels).expect("buffer sized from header");
    Slice::new(arr, meta).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_mask(path: &Path, mask: &MaskSlice) -> Result<()> {
    let (h, w) = mask.dim();
    let data: Vec<u8> = mask.view().iter().map(|&v| v * 255).collect();
    save(path, &data, w, h, ExtendedColorType::L8)
}

/// Accepts 0 as background and 1 or 255 as lesion.
pub fn read_mask(path: &Path) -> Result<MaskSlice> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let DynamicImage::ImageLuma8(buf) = img else {
        return Err(Error::format(path, "mask must be an 8-bit graymap"));
    };
    let mut out = Vec::with_capacity(w * h);
    for v in buf.into_raw() {
        out.push(match v {
            0 => 0,
            1 | 255 => 1,
            other => return Err(Error::format(path, format!("non-binary mask value {other}"))),
        });
    }
    MaskSlice::new(Array2::from_shape_vec((h, w), out).expect("buffer sized from header"))
}

/// Binary (`P5`) graymap.
fn save(path: &Path, data: &[u8], w: usize, h: usize, color: ExtendedColorType) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() + 32);
    PnmEncoder::new(&mut bytes)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(data, w as u32, h as u32, color)
        .map_err(|e| Error::format(path, e.to_string()))?;
    write_file(path, &bytes)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<DynamicImage> {
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| Error::format(path, e.to_string()))
}
