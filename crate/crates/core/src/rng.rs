//! Deterministic random-stream derivation.
//!
//! Every consumer of randomness derives its own ChaCha stream from a master
//! seed, an index (trial, example, ...) and a purpose tag, so results never
//! depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Trajectory = 1,
    Channel = 2,
    Estimation = 3,
    RandomPhase = 4,
    Dataset = 5,
    Init = 6,
    Shuffle = 7,
    StaleChannel = 8,
}

/// Independent stream for `(seed, index, purpose)`.
pub fn stream(seed: u64, index: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // the stream id has 64 bits; the top byte carries the purpose
    debug_assert!(index < 1 << 56, "index too large for stream derivation");
    rng.set_stream(((purpose as u64) << 56) | (index & ((1 << 56) - 1)));
    rng
}
