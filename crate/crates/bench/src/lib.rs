//! Shared fixtures for the benchmarks.

use kiras_core::trainer::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` random frames of width `dim` drawn from a fixed seed.
pub fn random_frames(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// A desk-preset configuration cut down so one iteration takes milliseconds.
pub fn small_config() -> TrainConfig {
    TrainConfig {
        num_envs: 8,
        horizon: 16,
        discriminator_batch: 64,
        epochs: 2,
        minibatches: 2,
        ..TrainConfig::default()
    }
}
