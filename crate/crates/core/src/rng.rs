//! Seed derivation and generator construction.
//!
//! Every sampler takes an explicit `u64` seed. Child seeds for runs, pages and
//! the two independent point processes of a run are derived from a master seed
//! with SplitMix64 mixing, so the whole tree is reproducible from one number.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used by every sampler in the crate.
pub type SimRng = ChaCha8Rng;

/// Algorithm name echoed into output metadata.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9, seed_from_u64) + SplitMix64 seed derivation";

/// Stream tags for [`derive_seed`].
pub const STREAM_CHANGES: u64 = 0xC4A7_6E00;
pub const STREAM_ACCESSES: u64 = 0xACCE_5500;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a child seed from `parent` and a path of indices/tags.
pub fn derive_seed(parent: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(parent), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019))))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
