//! Deterministic seed derivation.
//!
//! A single root seed is expanded into independent per-stage seeds by hashing
//! the root together with a stage label, so any stage can be rerun on its own
//! and still see exactly the random stream it saw inside the full pipeline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Seed for the stage named `label` under `root`.
pub fn derive(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stage_rng(root: u64, label: &str) -> ChaCha8Rng {
    rng(derive(root, label))
}
