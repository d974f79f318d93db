//! Shared inputs for the benchmarks.

use ftseg::{Domain, Slice, SliceMeta};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform random image in `[0, 1]`.
pub fn random_image(h: usize, w: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((h, w), |_| rng.random::<f64>())
}

pub fn random_slice(h: usize, w: usize, seed: u64) -> Slice {
    Slice::new(random_image(h, w, seed), SliceMeta::new("bench", 0, Domain::Source))
        .expect("values lie in [0, 1]")
}

#[cfg(test)]
mod tests {
    #[test]
    fn inputs_are_seeded() {
        assert_eq!(super::random_image(8, 8, 1), super::random_image(8, 8, 1));
    }
}
