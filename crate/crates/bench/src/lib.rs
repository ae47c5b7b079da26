//! Input generators shared by the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` points uniform in the unit cube.
pub fn uniform_rows(seed: u64, n: usize, d: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |_| rng.random::<f64>())
}

/// `k` tight blobs with `per` points each.
pub fn blobs(seed: u64, k: usize, per: usize, d: usize) -> Array2<f64> {
    let centers = uniform_rows(seed, k, d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    Array2::from_shape_fn((k * per, d), |(i, j)| centers[[i % k, j]] + rng.random_range(-0.02..0.02))
}
