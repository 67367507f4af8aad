//! Shared input builders for the calibration benchmarks.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use dco_core::scores::{SyntheticTask, TaskData};

/// Seeded uniform score vector.
pub fn random_scores(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>() * 10.0).collect()
}

/// A regression dataset sized for tuning benchmarks.
pub fn regression_data(n: usize, seed: u64) -> TaskData {
    SyntheticTask::regression(4, 1.0, seed)
        .expect("valid task")
        .generate(n)
}
