//! Seed and stream discipline. Every stochastic routine takes a 64-bit
//! seed and a replica index; the pair maps onto a counter-based generator
//! (ChaCha8: 64-bit stream id, 128-bit block counter) as
//! `seed -> key`, `replica index -> stream`. Replicas therefore draw from
//! provably disjoint streams regardless of scheduling, and identical
//! `(seed, stream)` pairs reproduce identical draws on any platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Generator for `(seed, stream)`; stream id = replica index.
pub fn replica_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Exponential variate with the given rate (inverse-CDF method).
pub fn exp_variate(rng: &mut SimRng, rate: f64) -> f64 {
    debug_assert!(rate > 0.0);
    let u: f64 = rng.random();
    let u = if u <= 0.0 { f64::MIN_POSITIVE } else { u };
    -u.ln() / rate
}
