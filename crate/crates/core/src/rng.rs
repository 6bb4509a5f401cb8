//! Seeded random streams.
//!
//! All stochastic pieces draw from ChaCha8. A master seed is split into
//! independent streams by `(seed, stream)`, where `stream` is a small integer
//! naming the consumer (sample index, fold, chain, ...). ChaCha's native
//! 64-bit stream selector makes the split portable and free of overlap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Well-known stream ids so two consumers of one master seed never collide.
pub mod streams {
    pub const GLOROT: u64 = 1;
    pub const KFOLD: u64 = 2;
    pub const HYPER: u64 = 3;
    pub const BOOTSTRAP: u64 = 4;
    pub const NUTS: u64 = 5;
    pub const MULTISTART: u64 = 6;
    pub const MINIBATCH: u64 = 7;
    /// Per-sample streams start here: `SAMPLE_BASE + index`.
    pub const SAMPLE_BASE: u64 = 1 << 32;
}
