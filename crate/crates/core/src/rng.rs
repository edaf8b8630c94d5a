//! Seeded random streams. Every consumer draws from its own ChaCha stream
//! derived from the run seed, so adding a consumer never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    /// Kernel weight initialization.
    Init = 1,
    /// Architecture scalar initialization.
    Arch = 2,
    /// Dataset layout and batch order.
    Data = 3,
    /// Additive image noise.
    Noise = 4,
    /// Fold assignment.
    Folds = 5,
    /// Random architecture baselines.
    Baseline = 6,
}

pub fn stream(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// Stream for a numbered sub-task (a fold, a baseline draw) of one purpose.
pub fn substream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(purpose as u64);
    rng
}
