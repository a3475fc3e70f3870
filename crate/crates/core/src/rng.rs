//! Portable pseudo-random stream.
//!
//! SplitMix64 (64-bit state, increment `0x9E3779B97F4A7C15`, the standard
//! finalizer) seeded directly with the user seed. Derived values:
//! - uniform `[0, 1)`: top 53 bits times `2^-53`
//! - bounded integer `[0, n)`: high 64 bits of `x * n` (128-bit product)
//! - standard normal: Box-Muller cosine branch from two uniforms,
//!   `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`
//!
//! Any language with 64-bit integers reproduces the same streams.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

pub struct Rng(SplitMix64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(SplitMix64::from_seed(seed.to_le_bytes()))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n` in draw order (partial Fisher-Yates
    /// from the front).
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

/// Sample of `k` indices out of `n` without replacement, ascending. All
/// indices when `k >= n`.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut idx = Rng::new(seed).choose_distinct(n, k);
    idx.sort_unstable();
    idx
}
