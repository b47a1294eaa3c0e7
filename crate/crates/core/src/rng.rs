//! Counter-based seeding.
//!
//! Every random draw in the bench comes from a generator keyed by
//! `(seed, label, indices...)`, so results never depend on which worker
//! evaluates a pixel or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Derive a sub-seed for a labeled stream.
pub fn substream(seed: u64, label: &str) -> u64 {
    mix64(seed ^ mix64(label_hash(label)))
}

/// Key for an indexed draw inside a labeled stream.
pub fn key(seed: u64, label: &str, indices: &[u64]) -> u64 {
    indices
        .iter()
        .fold(substream(seed, label), |acc, &i| mix64(acc ^ mix64(i)))
}

pub fn rng_for(seed: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key(seed, label, indices))
}
