//! Seeded random streams.
//!
//! Every generator is xoshiro256++ whose 256-bit state is expanded from a
//! 64-bit seed with SplitMix64. Independent streams of the same seed are
//! obtained by applying the xoshiro256 `jump` (2^128 steps) `stream` times, so
//! streams never overlap in practice.
//!
//! Uniform reals use the top 53 bits of each output:
//! `a + (b - a) * ((x >> 11) as f64 * 2^-53)`, which lies in `[a, b)`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

/// Generator for stream `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for _ in 0..stream {
        rng.jump();
    }
    rng
}

pub fn next_u64(rng: &mut Rng) -> u64 {
    rng.next_u64()
}

/// Uniform sample in `[0, 1)`.
pub fn unit(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform sample in `[a, b)`.
pub fn uniform(rng: &mut Rng, a: f64, b: f64) -> f64 {
    a + (b - a) * unit(rng)
}

/// Fills a vector with `len` uniform samples in `[a, b)`.
pub fn uniform_vec(rng: &mut Rng, len: usize, a: f64, b: f64) -> Vec<f64> {
    (0..len).map(|_| uniform(rng, a, b)).collect()
}

/// Uniform integer in `lo..=hi`.
pub fn range(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    debug_assert!(lo <= hi);
    lo + (rng.next_u64() % (hi - lo + 1) as u64) as usize
}
