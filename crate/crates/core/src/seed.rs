//! Deterministic seed derivation.
//!
//! Every random stream in a run is derived from the user seed plus a path of
//! integers (iteration, purpose, restart index, ...), so independent streams
//! never overlap and parallel execution cannot change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream purposes used by the BO loop.
pub mod purpose {
    pub const DESIGN: u64 = 0;
    pub const MODEL_INIT: u64 = 1;
    pub const TRAINING: u64 = 2;
    pub const INDEX_BATCH: u64 = 3;
    pub const RESTARTS: u64 = 4;
    pub const FOURIER: u64 = 5;
    pub const LEARNABLE: u64 = 6;
    pub const PRIOR: u64 = 7;
    pub const BASE: u64 = 8;
    pub const SOLVER_NOISE: u64 = 9;
    pub const RANDOM_SEARCH: u64 = 10;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed` with every element of `path`.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0x6A09_E667_F3BC_C908);
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x3C6E_F372_FE94_F82B)));
    }
    h
}

/// Seed derived from the bit patterns of a real vector.
pub fn derive_from_reals(seed: u64, values: &[f64]) -> u64 {
    let mut h = derive(seed, &[values.len() as u64]);
    for v in values {
        h = derive(h, &[v.to_bits()]);
    }
    h
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(seed: u64, path: &[u64]) -> Rng {
    rng(derive(seed, path))
}
