//! Counter-based random streams.
//!
//! Every Monte Carlo trial draws from its own ChaCha8 stream keyed by
//! `(seed, trial_index)`, so results do not depend on how trials are
//! scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RngStream = ChaCha8Rng;

/// Stream for trial `index` of a run seeded with `seed`.
pub fn trial_stream(seed: u64, index: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
