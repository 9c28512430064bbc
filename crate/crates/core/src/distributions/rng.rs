//! Seeded random streams.
//!
//! Every draw comes from ChaCha8 (`rand_chacha`). A `(seed, stream)` pair
//! selects an independent keystream: the 256-bit key is expanded from `seed`
//! with `seed_from_u64` and `stream` is written to the ChaCha stream
//! identifier. Monte Carlo replication `r` always reads stream `r`, so its
//! data never depends on scheduling order or thread count.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw in the open interval (0, 1) on the 2^-53 mid-point grid.
#[inline]
pub fn open_unit<R: RngCore>(rng: &mut R) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    ((rng.next_u64() >> 11) as f64 + 0.5) * SCALE
}
