//! Named random substreams.
//!
//! Every random draw in a run derives from one `u64` seed. Each consumer gets
//! its own ChaCha stream so that, for example, evaluation data never depends
//! on how many batches training consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags for substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Train = 2,
    Eval = 3,
    Probe = 4,
    Prop1 = 5,
}

/// Rng for `(seed, stream, index)`. Different indices give independent streams.
pub fn substream(seed: u64, stream: Stream, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) ^ index);
    rng
}
