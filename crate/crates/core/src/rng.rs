//! Seeded, splittable randomness.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] whose seed is
//! derived from one root seed and a stream label, so any run is reproducible
//! from a single `u64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over a label, used to turn names into stream ids.
pub fn label_hash(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Derives an independent child seed for `stream` from `seed`.
pub fn derive(seed: u64, stream: u64) -> u64 {
    mix(mix(seed) ^ stream.rotate_left(17) ^ 0x5851_f42d_4c95_7f2d)
}

/// Derives a child seed from a textual label.
pub fn derive_named(seed: u64, label: &str) -> u64 {
    derive(seed, label_hash(label))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn named_rng(seed: u64, label: &str) -> Rng {
    rng(derive_named(seed, label))
}
