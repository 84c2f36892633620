//! The single deterministic random source used everywhere in the crate.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(seed)`. Independent consumers of the same seed are
//! separated by ChaCha stream ids rather than by reseeding, so e.g. the jitter
//! drawn for band `k` never depends on how many numbers band `k - 1` used.
//! Gaussian draws use `rand_distr::StandardNormal`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type DetRng = ChaCha8Rng;

pub fn rng_for(seed: u64, stream: u64) -> DetRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal(rng: &mut DetRng) -> f64 {
    StandardNormal.sample(rng)
}
