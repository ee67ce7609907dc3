//! Seeded random streams.
//!
//! A stream is identified by `(seed, stream_id)` and backed by ChaCha8 with the
//! 64-bit stream id loaded into the cipher's nonce, so two streams with the
//! same seed never share keystream. Child streams are derived with
//!
//! ```text
//! child(stream_id, label) = splitmix64(stream_id ^ splitmix64(label + 1) * 0x9E3779B97F4A7C15)
//! ```
//!
//! and the seed carried through unchanged. Every consumer derives its stream
//! from logical task indices (model slot, T, trial, step, ...), never from
//! scheduling order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub type Seed = u64;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: Seed,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: Seed, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn root(seed: Seed) -> Self {
        Self::new(seed, 0)
    }

    pub fn child(&self, label: u64) -> Self {
        let mixed = splitmix64(label.wrapping_add(1)).wrapping_mul(GOLDEN);
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ mixed),
        }
    }

    /// Child reached by following `labels` in order.
    pub fn path(&self, labels: &[u64]) -> Self {
        labels.iter().fold(*self, |s, &l| s.child(l))
    }

    pub fn rng(&self) -> StreamRng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(self.stream);
        StreamRng { inner }
    }
}

/// Sampler bound to one [`RngStream`].
#[derive(Debug, Clone)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random::<u64>()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} of {n} without replacement");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
