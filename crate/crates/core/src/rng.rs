//! Seeded random streams.
//!
//! Every simulation draws from [`ChaCha8Rng`], which produces the same
//! sequence on every platform for a given seed. Independent sub-streams of a
//! seed are obtained with [`stream`].

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

pub fn from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sub-stream `k` of `seed`. Streams with different `k` do not overlap.
pub fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// Stateless 64-bit mix of a key (the SplitMix64 finalizer).
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Uniform variate in [0, 1) determined by a tuple of keys.
pub fn keyed_uniform(keys: &[u64]) -> f64 {
    let mut h = 0u64;
    for &k in keys {
        h = mix64(h ^ k);
    }
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
