//! Deterministic seed streams.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` whose seed is a
//! pure function of a base seed and a path of stream labels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a sequence of labels.
pub fn derive(seed: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(mix(seed), |acc, &l| mix(acc ^ mix(l)))
}

pub fn rng(seed: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, labels))
}

// Stream labels, kept distinct so that no two consumers share draws.
pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_SHUFFLE: u64 = 2;
pub(crate) const STREAM_LOSS_NOISE: u64 = 3;
pub(crate) const STREAM_MEMBER: u64 = 4;
pub(crate) const STREAM_WORLD: u64 = 5;
pub(crate) const STREAM_PAIRS: u64 = 6;
pub(crate) const STREAM_ROLLOUT: u64 = 7;
pub(crate) const STREAM_EVAL_CONTEXTS: u64 = 8;
pub(crate) const STREAM_REWARD_SAMPLE: u64 = 9;
pub(crate) const STREAM_REVERSAL: u64 = 10;
pub(crate) const STREAM_SHIFT: u64 = 11;
