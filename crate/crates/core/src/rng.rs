//! Deterministic random streams.
//!
//! The generator is ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded from a `u64`
//! via `SeedableRng::seed_from_u64`. Normal variates use the ziggurat sampler
//! of `rand_distr::StandardNormal`. Child streams are derived with
//! [`split_seed`], a SplitMix64 finalizer over the parent seed and task index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

pub const RNG_ALGORITHM: &str = "chacha8+ziggurat-normal";

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// `child_seed = hash64(parent_seed, task_index)`.
pub fn split_seed(parent: u64, task_index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ task_index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for sub-task `index`; does not advance `self`.
    pub fn child(&self, index: u64) -> SeededRng {
        SeededRng::new(split_seed(self.seed, index))
    }

    pub fn normal(&mut self) -> f32 {
        self.inner.sample::<f32, _>(StandardNormal)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f32 {
        self.inner.random::<f32>()
    }

    /// Uniform integer in `lo..hi`.
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..hi)
    }

    pub fn bernoulli(&mut self, p: f32) -> bool {
        self.uniform() < p
    }
}

pub fn seeded_normal(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.normal())
}
