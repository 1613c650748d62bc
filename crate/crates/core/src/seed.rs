//! Labeled sub-seed derivation.
//!
//! Every random component draws from its own stream, keyed by the master
//! seed and a fixed label, so the medium, the sources and the learner can be
//! regenerated independently of each other and of the order they run in.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha20Rng;

pub const LABEL_MEDIUM: &str = "medium";
pub const LABEL_SOURCES: &str = "sources";
pub const LABEL_NOISE: &str = "noise";
pub const LABEL_INIT: &str = "dictlearn-init";
pub const LABEL_TEST_SOURCES: &str = "image-test-sources";

pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_for(master: u64, label: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(master, label))
}
