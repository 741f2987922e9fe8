//! Seeded random streams and order-stable Monte-Carlo reduction.
//!
//! Work is cut into fixed-size chunks. Chunk `c` of a job draws from its own
//! ChaCha stream derived from `(seed, path, c)`, and partial results are merged
//! in chunk order, so an estimate depends only on the seed and the sample
//! count, never on how many threads ran it.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

pub type StreamRng = ChaCha8Rng;

/// Samples per work item.
pub const CHUNK: usize = 256;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random stream addressed by a master seed and a path of integer keys.
pub fn substream(seed: u64, path: &[u64]) -> StreamRng {
    let mut state = seed;
    for &k in path {
        state = splitmix64(&mut state) ^ k.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    }
    let mut bytes = [0u8; 32];
    for word in bytes.chunks_exact_mut(8) {
        word.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// A 64-bit seed for a sub-task, derived the same way as [`substream`].
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    use rand::RngCore;
    substream(seed, path).next_u64()
}

/// A rayon pool of fixed size. `0` means rayon's default.
#[derive(Clone)]
pub struct Workers {
    pool: Arc<rayon::ThreadPool>,
}

impl Workers {
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(Self { pool: Arc::new(pool) })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

pub trait Merge {
    fn merge(&mut self, other: Self);
}

/// Runs `body` over `samples` draws split into chunks and merges the
/// per-chunk accumulators in chunk order.
pub fn chunked<A, I, F>(samples: usize, seed: u64, path: &[u64], init: I, body: F) -> A
where
    A: Merge + Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, &mut StreamRng, usize) + Sync,
{
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut key = path.to_vec();
            key.push(c as u64);
            let mut rng = substream(seed, &key);
            let count = CHUNK.min(samples - c * CHUNK);
            let mut acc = init();
            body(&mut acc, &mut rng, count);
            acc
        })
        .collect();
    let mut total = init();
    for p in parts {
        total.merge(p);
    }
    total
}

/// Same as [`chunked`] but over a fixed list of items instead of fresh draws.
pub fn chunked_over<T, A, I, F>(items: &[T], init: I, body: F) -> A
where
    T: Sync,
    A: Merge + Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, &T) + Sync,
{
    let parts: Vec<A> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = init();
            for it in chunk {
                body(&mut acc, it);
            }
            acc
        })
        .collect();
    let mut total = init();
    for p in parts {
        total.merge(p);
    }
    total
}

/// Running mean and sum of squared deviations (Welford, merged with Chan's rule).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.n as f64).sqrt()
    }

    pub fn estimate(&self) -> McEstimate {
        McEstimate { mean: self.mean, stderr: self.stderr(), samples: self.n }
    }
}

impl Merge for Moments {
    fn merge(&mut self, other: Self) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        self.mean += delta * w;
        self.m2 += other.m2 + delta * delta * self.n as f64 * w;
        self.n = n;
    }
}

/// Entry-wise [`Moments`] for a fixed-length vector of statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct VecMoments {
    pub entries: Vec<Moments>,
}

impl VecMoments {
    pub fn new(len: usize) -> Self {
        Self { entries: vec![Moments::default(); len] }
    }

    pub fn push(&mut self, xs: &[f64]) {
        debug_assert_eq!(xs.len(), self.entries.len());
        for (m, &x) in self.entries.iter_mut().zip(xs) {
            m.push(x);
        }
    }

    pub fn means(&self) -> Vec<f64> {
        self.entries.iter().map(|m| m.mean).collect()
    }

    pub fn stderrs(&self) -> Vec<f64> {
        self.entries.iter().map(Moments::stderr).collect()
    }

    pub fn count(&self) -> u64 {
        self.entries.first().map_or(0, |m| m.n)
    }
}

impl Merge for VecMoments {
    fn merge(&mut self, other: Self) {
        for (a, b) in self.entries.iter_mut().zip(other.entries) {
            a.merge(b);
        }
    }
}

impl<A: Merge, B: Merge> Merge for (A, B) {
    fn merge(&mut self, other: Self) {
        self.0.merge(other.0);
        self.1.merge(other.1);
    }
}

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: u64,
}

impl McEstimate {
    /// `|mean - target| <= k * stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn substreams_differ_by_path() {
        let a: u64 = substream(7, &[1, 2]).random();
        let b: u64 = substream(7, &[1, 3]).random();
        let c: u64 = substream(7, &[1, 2]).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn moments_merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut seq = Moments::default();
        xs.iter().for_each(|&x| seq.push(x));
        let mut left = Moments::default();
        let mut right = Moments::default();
        xs[..313].iter().for_each(|&x| left.push(x));
        xs[313..].iter().for_each(|&x| right.push(x));
        left.merge(right);
        assert_eq!(left.n, seq.n);
        assert!((left.mean - seq.mean).abs() < 1e-12);
        assert!((left.variance() - seq.variance()).abs() < 1e-9);
    }

    #[test]
    fn chunked_is_independent_of_thread_count() {
        let run = |threads| {
            Workers::new(threads).unwrap().install(|| {
                chunked(10_000, 42, &[9], Moments::default, |acc, rng, n| {
                    for _ in 0..n {
                        acc.push(rng.random::<f64>());
                    }
                })
            })
        };
        let one = run(1);
        let eight = run(8);
        assert_eq!(one.mean.to_bits(), eight.mean.to_bits());
        assert_eq!(one.m2.to_bits(), eight.m2.to_bits());
        assert!(one.estimate().within(0.5, 4.0));
    }

    #[test]
    fn constant_samples_have_zero_variance() {
        let mut m = Moments::default();
        for _ in 0..100 {
            m.push(0.3);
        }
        assert_eq!(m.variance(), 0.0);
    }
}
