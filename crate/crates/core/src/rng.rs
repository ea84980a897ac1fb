//! Deterministic random-stream derivation.
//!
//! Every random draw in the lab comes from a ChaCha8 stream keyed by a master
//! seed plus a short role string. Keying by name rather than draw order means
//! adding a parameter or an experiment cell never shifts the noise consumed
//! by its neighbours, which keeps paired comparisons paired.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// A fresh ChaCha8 stream for (master seed, role).
pub fn stream(master: u64, role: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(role.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
