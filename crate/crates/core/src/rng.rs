//! Reproducible random streams.
//!
//! Every stochastic routine draws from [`ChaCha8Rng`], a counter-based
//! generator: the output is a pure function of `(key, stream, counter)`.
//! A master seed is turned into independent child generators in two ways:
//!
//! * [`stream`] keeps the key derived from the seed and selects the 64-bit
//!   ChaCha stream id, so replicate `r` of a run seeded with `s` always uses
//!   `stream(s, r)` regardless of how replicates are scheduled on threads;
//! * [`split`] derives a new 64-bit seed from `(seed, index)` with the
//!   SplitMix64 finalizer, for nesting (e.g. one seed per pair type inside a
//!   replicate).

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed number `index` of `seed`.
pub fn split(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed.wrapping_add(GOLDEN_GAMMA)) ^ index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA))
}

/// Generator for stream `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator seeded directly with `seed` (stream 0).
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
