//! Named deterministic RNG streams.
//!
//! Every random choice in a run draws from a stream derived from the master
//! seed and a textual label (e.g. `"tie-break"`, `"serve/100/round3"`).
//! Streams are independent of each other and of scheduling: parallel workers
//! derive their own stream from their signal id instead of sharing a
//! sequential generator, so results do not depend on thread interleaving.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from `master` and a stream label.
///
/// The label is hashed together with the master seed (SHA-256, truncated to
/// 64 bits) so that distinct labels give statistically independent seeds and
/// the mapping is stable across platforms and versions.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// A seeded generator for the stream named by `label` under `master`.
pub fn stream(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label))
}
