//! Seed derivation. Every consumer of randomness owns its own ChaCha stream
//! keyed by `(seed, stream)` so adding a consumer never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod streams {
    pub const DELAY: u64 = 1;
    pub const PERMUTATION: u64 = 2;
    pub const MINIBATCH: u64 = 3;
    pub const AUDIT: u64 = 4;
    pub const PROBLEM: u64 = 5;
    pub const WORKERS: u64 = 6;
    pub const START: u64 = 7;
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
