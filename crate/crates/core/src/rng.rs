//! Deterministic random substreams.
//!
//! Every random draw in a simulation comes from a ChaCha8 generator keyed by
//! the master seed and a path of indices (purpose, trial, OFDM symbol, ...),
//! so results do not depend on execution order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes.
pub mod purpose {
    pub const CODE: u64 = 1;
    pub const LAYOUT: u64 = 2;
    pub const INFO_BITS: u64 = 3;
    pub const CHANNEL: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const TEST: u64 = 99;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Returns the generator for `seed` along the index path `keys`.
pub fn substream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for &k in keys {
        h = splitmix64(h ^ splitmix64(k.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    ChaCha8Rng::seed_from_u64(h)
}
