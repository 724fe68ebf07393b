//! Seed derivation. Every randomized step draws from its own ChaCha stream
//! keyed by the run seed plus a purpose tag, so streams never interfere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod tag {
    pub const INIT: u64 = 0x1417;
    pub const SPLIT: u64 = 0x5b17;
    pub const PAIRS: u64 = 0xba12;
    pub const EVAL: u64 = 0xe7a1;
    pub const SYNTH: u64 = 0x5e7d;
    pub const SUBSET: u64 = 0x5ab5;
    pub const CAMERAS: u64 = 0xca3e;
    pub const CHECK: u64 = 0xc4ec;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a list of tags into a new seed.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix(seed), |acc, &t| splitmix(acc ^ splitmix(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(seed, tags))
}
