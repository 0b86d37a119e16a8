//! Deterministic seed derivation.
//!
//! Experiments fan a single master seed out into many independent RNG
//! streams (one per cascade, per walk, per episode, ...). Streams are
//! derived by hashing `(master, tag, index)` with a fixed algorithm so the
//! derivation is stable across platforms and releases, unlike
//! `std::hash::DefaultHasher`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes `(master, tag, index)` into a well-mixed 64-bit seed.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = fnv1a(&master.to_le_bytes(), FNV_OFFSET);
    h = fnv1a(tag.as_bytes(), h);
    h = fnv1a(&index.to_le_bytes(), h);
    splitmix64(h)
}

/// A ChaCha8 stream seeded from [`derive_seed`].
pub fn derive_rng(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, index))
}
