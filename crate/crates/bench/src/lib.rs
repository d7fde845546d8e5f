//! Shared fixtures for the benchmarks.

use kale_core::scenarios::gaussian_pair;
use kale_core::ParticleCloud;

/// Source and target clouds of `n` points each, one unit apart.
pub fn fixture(n: usize) -> (ParticleCloud, ParticleCloud) {
    gaussian_pair(n, 1.0, 0).expect("valid fixture")
}
