//! Counter-style RNG streams.
//!
//! Every random decision in the lab draws from a stream keyed by
//! `(seed, domain, a, b)`, so results never depend on scheduling order or
//! on how many workers share the load.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream domains. Keep values stable: changing one changes every artifact.
pub mod domain {
    pub const CATALOG: u64 = 1;
    pub const USERS: u64 = 2;
    pub const TASTE: u64 = 3;
    pub const BEHAVIOR: u64 = 4;
    pub const PAGE: u64 = 5;
    pub const WARMUP_BEHAVIOR: u64 = 6;
    pub const WARMUP_PAGE: u64 = 7;
    pub const PILOT_BEHAVIOR: u64 = 8;
    pub const EVAL_BEHAVIOR: u64 = 9;
    pub const EVAL_PAGE: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, domain: u64, a: u64, b: u64) -> StreamRng {
    let mut seed_bytes = [0u8; 32];
    let mut h = splitmix64(seed);
    for (i, word) in [domain, a, b, 0x5EED].into_iter().enumerate() {
        h = splitmix64(h ^ word);
        seed_bytes[i * 8..(i + 1) * 8].copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed_bytes)
}
