//! Seed derivation. All randomness in the toolkit flows from one base seed;
//! submodules derive their own streams from a stable role tag so that adding
//! or reordering consumers does not disturb unrelated streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the tag bytes. Stable across platforms and releases, unlike
/// the std hasher.
fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a sub-seed from a base seed and a role tag.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    splitmix64(base ^ fnv1a(tag))
}

/// Derive a sub-seed that also depends on an index (epoch, step, query, ...).
pub fn derive_seed_indexed(base: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive_seed(base, tag) ^ splitmix64(index))
}

/// The deterministic RNG used throughout the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
