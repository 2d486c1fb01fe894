//! Seed derivation.
//!
//! One master seed fans out into independent streams keyed by purpose, so
//! that changing how many draws one component makes never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StdRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a purpose tag.
pub fn derive(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then mixed with the parent
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(seed ^ splitmix64(h))
}

/// Derive a child seed from `seed` and an integer index.
pub fn derive_index(seed: u64, index: u64) -> u64 {
    splitmix64(seed.wrapping_add(splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

pub fn rng_from(seed: u64) -> StdRng {
    ChaCha8Rng::seed_from_u64(seed)
}
