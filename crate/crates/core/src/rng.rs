//! Seed derivation. Every random source in a run is derived from the root
//! seed plus a role tag, so replaying a manifest reproduces the run exactly.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from a root seed and a role tag.
pub fn derive_seed(root: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// RNG seeded from a root seed and a role tag.
pub fn seeded_rng(root: u64, tag: &str) -> ChaCha12Rng {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(tag.as_bytes());
    ChaCha12Rng::from_seed(h.finalize().into())
}

/// RNG seeded directly from a u64.
pub fn rng_from_seed(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
