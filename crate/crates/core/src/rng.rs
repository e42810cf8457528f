//! Explicitly seeded random streams.
//!
//! Every consumer of randomness owns a [`ChaCha8Rng`] derived from a master
//! seed and a textual stream label. The child seed is the first eight bytes
//! (little-endian) of `SHA-256(master_seed_le || label_utf8)`, so a stream is
//! fully determined by `(master, label)` and independent of call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives the child seed for `(master, label)`.
pub fn child_seed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Opens the stream for `(master, label)`.
pub fn stream(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(master, label))
}

/// Opens a stream directly from a seed, without label splitting.
pub fn from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
