//! Seed derivation and tensor checksums shared across modules.

use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive an independent RNG stream from a master seed and a stream label.
///
/// Every parallelizable unit (clip, sample job, training run) owns a stream
/// derived from its id, so regenerating one unit never disturbs another.
pub fn stream_rng(master_seed: u64, label: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(seed)
}

/// SHA-256 of a tensor's little-endian f32 byte image, as lowercase hex.
///
/// Used for frozen-parameter assertions: two tensors with equal checksums are
/// byte-identical at f32.
pub fn checksum_f32(arr: &Array2<f32>) -> String {
    let mut hasher = Sha256::new();
    for v in arr.iter() {
        hasher.update(v.to_le_bytes());
    }
    hex_string(&hasher.finalize())
}

/// SHA-256 over raw bytes, as lowercase hex.
pub fn checksum_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_string(&hasher.finalize())
}

fn hex_string(digest: &[u8]) -> String {
    let mut s = String::with_capacity(digest.len() * 2);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
