//! Seeded random streams.
//!
//! A run owns one master seed. Each consumer (weight init, data generation,
//! noise draws, dropout, ...) gets its own ChaCha stream so that adding draws in
//! one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named substreams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    TrainData = 2,
    TestData = 3,
    Shuffle = 4,
    Noise = 5,
    Dropout = 6,
    Mixup = 7,
    Eval = 8,
    Centers = 9,
}

/// Deterministic generator for `(seed, stream)`.
pub fn stream(seed: u64, which: Stream) -> Rng {
    substream(seed, which as u64)
}

/// Deterministic generator for an arbitrary stream id.
pub fn substream(seed: u64, id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
