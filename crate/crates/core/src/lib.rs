//! Unsupervised segmentation of CT infection regions with Fourier-domain
//! style transfer and a mean-teacher training loop.

pub mod elastic;
pub mod error;
pub mod fourier;
pub mod ingest;
pub mod metrics;
pub mod phantom;
pub mod projection;
pub mod segnet;
pub mod slice;
pub mod trainer;

pub use error::{Error, Result};
pub use slice::{Domain, MaskSlice, Slice, SliceMeta};
