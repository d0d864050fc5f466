//! Deterministic random streams.
//!
//! All randomness in the crate flows from one master seed. Sub-streams are
//! addressed by a path of integers (purpose tag, run index, attribute, block)
//! so results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags for sub-stream paths.
pub mod tag {
    pub const RANDOMIZE: u64 = 1;
    pub const QUERY: u64 = 2;
    pub const DEPENDENCE: u64 = 3;
    pub const PARTY: u64 = 4;
    pub const SHARES: u64 = 5;
    pub const RUN: u64 = 6;
    pub const SYNTHETIC: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a seed from `seed` and a path of stream identifiers.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0xA5A5))))
}

pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}
