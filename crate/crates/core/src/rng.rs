//! Random streams. Every replica owns a ChaCha8 generator keyed by its seed
//! with stream id `seed ^ replica`, so replicas never share state and can be
//! run in any order or on any number of threads.

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

pub type SimRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, replica: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(seed ^ replica);
    rng
}
