//! Deterministic derivation of independent random streams.
//!
//! Every stochastic operation takes an explicit seed. Child seeds are derived
//! from a parent seed plus a path of indices (stage, generation, individual,
//! input, run, ...) by chaining SplitMix64 finalizers, so a job's stream is a
//! pure function of its coordinates and never of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stage tags used as the first path element by the pipeline stages.
pub mod stage {
    pub const DEVICE: u64 = 0x6465_7669_6365;
    pub const GENETIC: u64 = 0x6765_6e65;
    pub const TRAIN: u64 = 0x7472_6169_6e;
    pub const ENGINE: u64 = 0x656e_6769_6e65;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a path of indices.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &p| {
        splitmix64(acc.rotate_left(23).wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ splitmix64(p))
    })
}

/// Seeded stream for the given coordinates.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}
