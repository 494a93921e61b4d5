//! Seeded, splittable randomness.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by one
//! 64-bit seed. Independent consumers (time bins, fixtures, initializers) get
//! their own stream number so they can run in any order or in parallel and
//! still produce the same values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers for the subsystems that draw randomness.
pub mod streams {
    pub const POINT_CLOUD: u64 = 0x0100_0000;
    pub const FPS: u64 = 0x0200_0000;
    pub const CROP: u64 = 0x0300_0000;
    pub const WEIGHTS: u64 = 0x0400_0000;
    pub const FEATURES: u64 = 0x0500_0000;
}

/// Generator for `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
