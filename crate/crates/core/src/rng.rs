//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a base seed, a stream label and an index, so results never depend
//! on scheduling or on how many other streams were consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Mixes a base seed with a stream label and index into a new seed.
pub fn derive_seed(base: u64, stream: &str, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ fnv1a(stream)).wrapping_add(splitmix64(index)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, stream: &str, index: u64) -> Rng {
    rng_from_seed(derive_seed(base, stream, index))
}
