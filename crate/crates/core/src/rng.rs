//! Seed derivation.
//!
//! Every random stream in a run is a ChaCha8 generator keyed by a 64-bit seed
//! derived from the master seed and a purpose tag, so results never depend on
//! which worker touched a stream first.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags mixed into derived seeds.
pub mod tag {
    pub const INIT: u64 = 0x1;
    pub const ROUND: u64 = 0x2;
    pub const CLIENT: u64 = 0x3;
    pub const SPLIT: u64 = 0x4;
    pub const PARTITION: u64 = 0x5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of discriminators.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_stream(base: u64, parts: &[u64]) -> ChaCha8Rng {
    stream(derive_seed(base, parts))
}
