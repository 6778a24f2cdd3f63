//! Deterministic random streams for simulations.
//!
//! Every stochastic operation in this crate takes an explicit [`RunRng`].
//! A `RunRng` is a counter-based ChaCha8 stream addressed by a 64-bit seed;
//! [`RunRng::split`] derives an independent child stream from a tag, so a
//! single run seed can fan out to parallel workers (seeds, sweep cells,
//! model-selection arms) without any shared mutable state.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Splittable seeded generator. Cloning yields an identical stream;
/// `split` yields an independent one.
#[derive(Debug, Clone)]
pub struct RunRng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// splitmix64 finalizer over a (seed, tag) pair.
fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RunRng {
    pub fn new(seed: u64) -> Self {
        RunRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent child stream. The child depends only on the
    /// parent's seed and the tag, never on how much the parent has already
    /// generated, so stream layout is stable across refactors.
    pub fn split(&self, tag: u64) -> RunRng {
        RunRng::new(mix(self.seed, tag))
    }

    /// Uniform draw from `[lo, hi)` (`lo` when the range is empty).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        self.inner.gen_range(lo..hi)
    }

    /// Zero-mean gaussian with standard deviation `sigma`.
    pub fn normal(&mut self, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return 0.0;
        }
        let z: f64 = self.inner.sample(rand_distr::StandardNormal);
        z * sigma
    }

    /// Index drawn from an explicit probability vector.
    pub fn sample_weighted(&mut self, probs: &[f64]) -> usize {
        assert!(!probs.is_empty(), "empty probability vector");
        let u: f64 = self.inner.gen_range(0.0..1.0);
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Rounding can leave acc slightly below 1; fall back to the last
        // index with positive mass.
        probs
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(probs.len() - 1)
    }

    /// Successor drawn from a sparse `(index, probability)` row.
    pub fn sample_sparse(&mut self, row: &[(u32, f64)]) -> u32 {
        assert!(!row.is_empty(), "empty transition row");
        let u: f64 = self.inner.gen_range(0.0..1.0);
        let mut acc = 0.0;
        for &(idx, p) in row {
            acc += p;
            if u < acc {
                return idx;
            }
        }
        row.iter()
            .rev()
            .find(|&&(_, p)| p > 0.0)
            .map(|&(idx, _)| idx)
            .unwrap_or(row[row.len() - 1].0)
    }
}

impl RngCore for RunRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}
