//! Seed derivation.
//!
//! Every random decision in a run draws from a named substream derived from the
//! run seed and a path such as `(purpose, round, vector)`. Substreams are
//! independent of evaluation order, so parallel work and resumed runs see the
//! same numbers as a sequential uninterrupted run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Tags separating the substreams used by different parts of the engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Generate = 1,
    Subsample = 2,
    Oracle = 3,
    Noise = 4,
    Initial = 5,
    Holdout = 6,
    Init = 7,
    Shuffle = 8,
    Dropout = 9,
    Acquire = 10,
    Epsilon = 11,
    Warmup = 12,
    Probability = 13,
    Trial = 14,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, purpose: Purpose, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(purpose as u64));
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, purpose, path))
}

/// FNV-1a, stable across platforms and releases (unlike `DefaultHasher`).
pub fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

pub const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
