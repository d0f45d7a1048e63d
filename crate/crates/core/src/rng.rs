//! Counter-based random streams.
//!
//! Every random draw in an optimization run is keyed by
//! `(seed, iteration, view, purpose)`, so any single gradient can be replayed
//! without reproducing the draws that preceded it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Camera = 1,
    Light = 2,
    Shading = 3,
    Timestep = 4,
    Noise = 5,
    Occupancy = 6,
    Jitter = 7,
    Init = 8,
    ViewIndex = 9,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix the stream key into a single 64-bit seed.
pub fn stream_key(seed: u64, iteration: u64, view: u64, purpose: Purpose) -> u64 {
    let mut h = splitmix(seed);
    h = splitmix(h ^ iteration);
    h = splitmix(h ^ view.wrapping_mul(0x2545_F491_4F6C_DD1D));
    splitmix(h ^ purpose as u64)
}

pub fn stream(seed: u64, iteration: u64, view: u64, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, iteration, view, purpose))
}

/// Stateless uniform in `[0, 1)` for per-cell probes where constructing a
/// full generator per cell would dominate the cost.
pub fn hash_uniform(key: u64, index: u64) -> f64 {
    let bits = splitmix(key ^ splitmix(index));
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
