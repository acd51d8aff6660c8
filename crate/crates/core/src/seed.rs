//! Deterministic per-path seeding for Monte-Carlo ensembles.
//!
//! Every path of an ensemble draws from its own ChaCha stream whose seed is a
//! pure function of `(master, index)`, so ensembles can be generated in any
//! order or in parallel and still reproduce bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of path `index` under `master`.
pub fn path_seed(master: u64, index: u64) -> u64 {
    mix(mix(master) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream for a named sub-task (train/validate split, etc.) derived from the master seed.
pub fn auxiliary_rng(master: u64, tag: &str) -> ChaCha8Rng {
    let h = tag
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |acc, b| (acc ^ b as u64).wrapping_mul(0x0100_0000_01B3));
    rng_from_seed(mix(master ^ h))
}
