//! Seeded random number generation.
//!
//! Every solver draws from [`FmRng`], xoshiro256++ (Blackman & Vigna) whose
//! 256-bit state is expanded from the 64-bit seed with SplitMix64
//! (increment `0x9e3779b97f4a7c15`, multipliers `0xbf58476d1ce4e5b9` and
//! `0x94d049bb133111eb`). Both algorithms are fixed-width integer arithmetic,
//! so a seed reproduces the same stream on every platform.

use rand::{RngCore, SeedableRng};
use rand_distr::{Distribution, Gamma, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type FmRng = Xoshiro256PlusPlus;

pub fn rng_from_seed(seed: u64) -> FmRng {
    FmRng::seed_from_u64(seed)
}

/// Derives the seed of sub-stream `index` from `seed` (SplitMix64 finalizer
/// applied to `seed + (index + 1) * golden`).
pub fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add((index.wrapping_add(1)).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw on the open interval (0, 1).
#[inline]
pub fn open_unit(rng: &mut FmRng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[inline]
pub fn std_normal(rng: &mut FmRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gamma draw parameterised by shape and rate.
pub fn gamma_rate(rng: &mut FmRng, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma shape and rate must be positive and finite")
        .sample(rng)
}
