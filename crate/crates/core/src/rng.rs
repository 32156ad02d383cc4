//! Seeded randomness. Every random draw in the pipeline flows from one root
//! seed through these helpers so runs replay bit-exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-item seed, independent of the order in which items are processed.
pub fn item_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

/// Seed for a named sub-stream (shuffling, dropout, init, ...).
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer: nearby (seed, stream) pairs land far apart
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
