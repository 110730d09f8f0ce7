//! Shared fixtures for the benchmarks.

use linproxy_core::EmbeddedProblem;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random full-rank problem over `inputs` model inputs, deterministic in
/// `seed`.
pub fn problem(inputs: usize, seed: u64) -> EmbeddedProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = inputs + 1;
    let b = DMatrix::from_fn(dim, dim + 4, |_, _| rng.random_range(-1.0..1.0));
    let sigma = &b * b.transpose();
    let beta: Vec<f64> = (0..inputs).map(|_| rng.random_range(-2.0..2.0)).collect();
    EmbeddedProblem::from_covariance(&sigma, &beta).expect("random covariance is valid")
}

/// Association thresholds `0.01, …, 0.10`.
pub fn epsilons() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 100.0).collect()
}
