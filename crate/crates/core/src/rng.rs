//! Deterministic per-stream random number generators.
//!
//! Every Monte Carlo replica draws from its own ChaCha8 stream, addressed by
//! `(seed, purpose, index)`. The keystream is counter based, so replicas can be
//! generated in any order or on any thread and still reproduce bit-exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PathRng = ChaCha8Rng;

/// Independent stream families. The tag occupies the top 16 bits of the
/// ChaCha stream id, the replica index the low 48.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Purpose {
    LevyPath = 1,
    CbProcess = 2,
    Flow = 3,
    BridgeMaxima = 4,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> PathRng {
    debug_assert!(index < (1 << 48));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) | (index & ((1 << 48) - 1)));
    rng
}
