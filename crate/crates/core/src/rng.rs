//! Seed-derived random substreams.
//!
//! Every random draw in a run comes from a stream keyed by the master seed
//! and a short tag path (domain, iteration, device, ...). Streams are
//! independent of evaluation order, so results do not depend on how work is
//! scheduled across threads or transmission blocks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream type used throughout the simulator.
pub type Stream = ChaCha8Rng;

/// Stream domains. Kept distinct so that two purposes never share draws.
pub mod domain {
    pub const REPETITION: u64 = 0x5245_5045;
    pub const SAMPLE: u64 = 0x5341_4d50;
    pub const FADING: u64 = 0x4641_4445;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const TOPOLOGY: u64 = 0x544f_504f;
    pub const DATA: u64 = 0x4441_5441;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a tag path into a 64-bit key.
pub fn derive_key(master: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(master), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

/// Opens the stream for `master` under `tags`.
pub fn substream(master: u64, tags: &[u64]) -> Stream {
    Stream::seed_from_u64(derive_key(master, tags))
}

/// Seed for the `index`-th repetition of an experiment.
pub fn repetition_seed(master: u64, index: usize) -> u64 {
    derive_key(master, &[domain::REPETITION, index as u64])
}
