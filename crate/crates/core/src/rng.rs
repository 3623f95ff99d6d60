//! Seeded random streams.
//!
//! All randomness comes from ChaCha8 seeded with a 64-bit master seed via
//! `seed_from_u64`, with the stream selector picking an independent
//! sequence. The experiment harness uses stream `dataset << 32` for the
//! data of a dataset and `(dataset << 32) | (init + 1)` for each of its
//! initializations, so results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Generator = ChaCha8Rng;

pub fn generator(seed: u64, stream: u64) -> Generator {
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    g.set_stream(stream);
    g
}

/// Stream generating the data of dataset `dataset`.
pub fn dataset_stream(dataset: u32) -> u64 {
    u64::from(dataset) << 32
}

/// Stream initializing run `init` on dataset `dataset`.
pub fn init_stream(dataset: u32, init: u32) -> u64 {
    (u64::from(dataset) << 32) | (u64::from(init) + 1)
}
