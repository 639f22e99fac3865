//! Deterministic sub-stream derivation. One root seed per run; every
//! consumer derives its own independent stream from (root, label, index)
//! so adding a new consumer never shifts the draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed by hashing the root with a purpose label and an
/// index. Stable across platforms: the hash input is little-endian.
pub fn sub_seed(root: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Generator for a derived sub-stream.
pub fn rng(root: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(root, label, index))
}

/// Generator seeded directly, for operations whose contract takes a seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
