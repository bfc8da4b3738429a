//! Seed derivation for independent, reproducible random streams.
//!
//! Every stochastic decision in the optimizer draws from a stream keyed by
//! `(seed, purpose, index)`, so the result of a decision depends only on the
//! experiment seed and the position of the decision, never on how many
//! numbers some earlier step happened to consume.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Scramble = 1,
    Acquisition = 2,
    GpFit = 3,
    Genetic = 4,
    Weights = 5,
    Hypervolume = 6,
    Sampling = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream as u64) ^ index)
}

pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}
