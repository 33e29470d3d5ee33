//! Seeded randomness shared by every stochastic operation.
//!
//! All randomness flows through [`DetRng`], a ChaCha8 stream whose output is
//! fixed by its `u64` seed on every platform.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

pub type DetRng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> DetRng {
    DetRng::seed_from_u64(seed)
}

/// Derives an independent stream from a base seed and a stream index, e.g.
/// one stream per scene.
pub fn substream(seed: u64, stream: u64) -> DetRng {
    let mut rng = DetRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_row<R: Rng + ?Sized>(rng: &mut R) -> [f64; 4] {
    [
        standard_normal(rng),
        standard_normal(rng),
        standard_normal(rng),
        standard_normal(rng),
    ]
}
