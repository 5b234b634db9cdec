//! Seed plumbing: one root seed fans out into named, independent streams.
//!
//! Stream seeds are derived by hashing `(root, name)` so that adding a new
//! stream (or drawing more numbers from one) never perturbs any other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Stream used for sampling device parameters.
pub const DEVICE_STREAM: &str = "device";
/// Stream used for training-weight initialisation.
pub const TRAINING_INIT_STREAM: &str = "training-init";
/// Stream used for Monte Carlo noise injection.
pub const NOISE_STREAM: &str = "noise";

/// Derive a child seed from `root` and a stream name.
pub fn derive_seed(root: u64, stream: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(stream.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Generator for a named stream of `root`.
pub fn stream_rng(root: u64, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream))
}

/// Generator for the `index`-th substream of `seed` (e.g. one crossbar cell).
pub fn indexed_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
