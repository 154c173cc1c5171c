//! Labeled deterministic random streams.
//!
//! Every consumer of randomness asks for its own stream keyed by
//! `(seed, label)`, so adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type RandomStream = ChaCha20Rng;

pub fn spawn_stream(seed: u64, label: &str) -> RandomStream {
    let mut hasher = Sha256::new();
    hasher.update(b"uwamod-stream\0");
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(key)
}
