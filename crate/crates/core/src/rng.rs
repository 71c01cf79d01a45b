//! Reproducible random streams.
//!
//! Every stream is ChaCha20 keyed by the 64-bit seed (expanded with
//! `seed_from_u64`) and selected by a 64-bit stream id, so work split into
//! lanes produces the same numbers no matter how the lanes are scheduled.
//! Normals use the ziggurat sampler from `rand_distr::StandardNormal`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Stream = ChaCha20Rng;

/// Independent stream `lane` derived from `seed`.
pub fn stream(seed: u64, lane: u64) -> Stream {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(lane);
    rng
}

pub fn standard_normal(rng: &mut Stream) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill_standard_normal(rng: &mut Stream, out: &mut [f64]) {
    for v in out {
        *v = StandardNormal.sample(rng);
    }
}
