//! Stable per-item seed derivation.
//!
//! Every random decision in the pipeline is keyed by `(global seed, purpose, item id)`
//! rather than by a shared generator, so results do not depend on iteration order or
//! on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Hashes `(seed, purpose, key)` to a 64-bit value that is stable across
/// platforms and releases.
pub fn derive_seed(seed: u64, purpose: &str, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((purpose.len() as u64).to_le_bytes());
    hasher.update(purpose.as_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

/// Maps `(seed, purpose, key)` to a point in `[0, 1)` with 53 bits of resolution.
pub fn unit_interval(seed: u64, purpose: &str, key: &str) -> f64 {
    (derive_seed(seed, purpose, key) >> 11) as f64 / (1u64 << 53) as f64
}

/// A generator dedicated to one `(seed, purpose, key)` triple.
pub fn item_rng(seed: u64, purpose: &str, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, key))
}
