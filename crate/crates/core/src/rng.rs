//! Seeded randomness.
//!
//! Every random draw in the crate (synthetic graphs, weight init, dropout,
//! random deletion baselines) comes from ChaCha8 seeded through
//! [`seeded`]. ChaCha8 output is fully specified and independent of
//! platform and word size, so a seed reproduces bit-identical results
//! everywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for `(seed, stream)`. Distinct streams of one seed are
/// independent, which lets per-node work draw randomness without
/// depending on evaluation order.
pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
