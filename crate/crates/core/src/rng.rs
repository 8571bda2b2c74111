//! Seeded random streams.
//!
//! A thin wrapper over ChaCha8 (counter based, so independent sub-streams are
//! cheap to derive) with ziggurat standard-normal sampling.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Single-owner random stream. Identical seeds give identical streams.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent stream `stream` of the generator seeded with `seed`.
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Standard normal sample.
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// Well-known stream ids so every consumer of a run seed draws from its own
/// sequence.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const AUGMENT: u64 = 5;
    pub const LAMBDA: u64 = 6;
    pub const FREE_EMBEDDING: u64 = 7;
    pub const LABEL_SHUFFLE: u64 = 8;
    pub const PROBE_NOISE: u64 = 9;
    pub const EVAL: u64 = 10;
}
