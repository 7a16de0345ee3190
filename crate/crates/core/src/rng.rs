//! Seed derivation.
//!
//! Every random stream in a run descends from one root seed by hashing the
//! root together with a label and an index, so adding a new consumer never
//! shifts the streams of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// `hash(root, label, index)` truncated to 64 bits.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(root: u64, label: &str, index: u64) -> Rng {
    rng_from(derive_seed(root, label, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_label_sensitive() {
        assert_eq!(derive_seed(1, "teacher", 0), derive_seed(1, "teacher", 0));
        assert_ne!(derive_seed(1, "teacher", 0), derive_seed(1, "teacher", 1));
        assert_ne!(derive_seed(1, "teacher", 0), derive_seed(1, "eval", 0));
        assert_ne!(derive_seed(1, "teacher", 0), derive_seed(2, "teacher", 0));
        // "ab" + 1 must differ from "a" + ... (length prefix keeps labels unambiguous)
        assert_ne!(derive_seed(0, "ab", 0), derive_seed(0, "a", 0));
    }
}
