//! Deterministic random streams.
//!
//! Every run owns a handful of independent ChaCha streams derived from a
//! master seed, so that consumers (initialization, seed-phase experience,
//! environment resets, exploration noise, replay sampling, evaluation) never
//! perturb one another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

/// Builds a stream from a seed and a stream id.
pub fn stream(seed: u64, id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Mixes two integers into a new seed (splitmix64 finalizer).
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeds of the per-run streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub init: u64,
    pub seed_phase: u64,
    pub env: u64,
    pub noise: u64,
    pub sampling: u64,
    pub eval: u64,
}

impl RunSeeds {
    pub fn from_master(master: u64) -> Self {
        let mut rng = stream(master, 0);
        Self {
            init: rng.random(),
            seed_phase: rng.random(),
            env: rng.random(),
            noise: rng.random(),
            sampling: rng.random(),
            eval: rng.random(),
        }
    }

    /// Shares initialization and seed-phase experience with `shared`, while
    /// everything after the seed phase follows `own`.
    pub fn paired(shared: u64, own: u64) -> Self {
        let s = Self::from_master(shared);
        let o = Self::from_master(own);
        Self { init: s.init, seed_phase: s.seed_phase, ..o }
    }
}
