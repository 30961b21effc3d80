//! Reproducible random streams.
//!
//! Every stream is ChaCha20 keyed by a 64-bit seed with the 64-bit ChaCha
//! stream id selecting an independent keystream. ChaCha is counter based, so
//! a stream's draws depend only on `(seed, stream id)` and never on thread
//! scheduling or on how many draws other streams made. Nested identifiers
//! (repetition, outlier plan, replicate, ...) are folded into the seed with
//! SplitMix64 before the final stream id is applied.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type StreamRng = ChaCha20Rng;

/// Independent stream `stream_id` under `seed`.
pub fn stream(seed: u64, stream_id: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Derives a child seed from a parent seed and a tag path.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t.wrapping_add(0x9E37_79B9))))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
