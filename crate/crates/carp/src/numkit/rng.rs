//! Seeded, counter-based random number generation.
//!
//! Every stochastic routine in the crate draws from a [`Rng`] so that a run
//! is a pure function of its seed. The stream itself is ChaCha8 (a
//! counter-based stream cipher); independent substreams are derived by
//! hashing the parent seed with the substream index, so per-item sampling
//! stays reproducible no matter how work is scheduled, and derivation nests.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Deterministic generator; identical seeds produce identical streams on
/// every platform.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent substream for index `idx`, a pure function of
    /// `(self.seed, idx)`. Consuming draws from the parent does not affect
    /// its substreams, and derivation nests: `substream(a).substream(b)`
    /// differs from `substream(b)`.
    pub fn substream(&self, idx: u64) -> Self {
        Rng::from_seed(mix(self.seed, idx))
    }

    /// Standard normal draw.
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Vector of `n` independent N(0, sigma²) draws.
    pub fn normal_vec(&mut self, n: usize, sigma: f64) -> Vec<f64> {
        (0..n).map(|_| sigma * self.standard_normal()).collect()
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }
}

/// SplitMix64-style seed mixing.
fn mix(seed: u64, idx: u64) -> u64 {
    let mut z = seed ^ idx.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0xd1b5_4a32_d192_ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
