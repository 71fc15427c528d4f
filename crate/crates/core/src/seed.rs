//! Derived random streams.
//!
//! Every random decision in the pipeline draws from a stream keyed by the
//! master seed plus a list of labels (datapoint id, variant kind, k, restart
//! index, ...). Streams are therefore independent of iteration order and
//! thread count, and stable across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The RNG used for every seeded stream.
pub type Stream = ChaCha8Rng;

fn digest(master: u64, labels: &[&str]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    for label in labels {
        // length prefix keeps ["ab", "c"] and ["a", "bc"] apart
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
    }
    hasher.finalize().into()
}

/// Build a stream for `labels` under `master`.
pub fn derive_stream(master: u64, labels: &[&str]) -> Stream {
    ChaCha8Rng::from_seed(digest(master, labels))
}

/// Derive a child seed, e.g. the per-k seed of a sweep.
pub fn derive_seed(master: u64, labels: &[&str]) -> u64 {
    let bytes = digest(master, labels);
    u64::from_le_bytes(bytes[..8].try_into().expect("digest has 32 bytes"))
}
