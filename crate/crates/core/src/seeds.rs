//! Counter-based seed derivation.
//!
//! Every random stream in an experiment is keyed by a path of integers
//! (master seed, sweep point, run, stream id, block ...). The derived seed
//! depends only on that path, never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub const STREAM_TRAIN: u64 = 1;
pub const STREAM_EVAL: u64 = 2;
pub const STREAM_AUDIT: u64 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of counters into a new 64-bit seed.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn rng_from(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_at(master: u64, path: &[u64]) -> SimRng {
    rng_from(derive(master, path))
}
