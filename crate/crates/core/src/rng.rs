//! Counter-based seed derivation so every stream is reproducible on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of stream `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream) ^ index)
}

pub fn rng_from(master: u64, stream: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, stream, index))
}

pub mod streams {
    pub const STRUCTURE: u64 = 1;
    pub const RICH: u64 = 2;
    pub const POOR: u64 = 3;
    pub const PAIRED: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const SUBSAMPLE: u64 = 6;
    pub const INIT: u64 = 7;
    pub const SHUFFLE: u64 = 8;
    pub const HOLDOUT: u64 = 9;
    pub const TRIAL: u64 = 10;
}
