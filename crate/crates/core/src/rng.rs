//! Seed derivation shared by everything that draws randomness.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates nearby seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic per-stream seed from a master seed, e.g. one stream per
/// time step of a random graph schedule.
pub(crate) fn derive_seed(master: u64, stream: u64) -> u64 {
    mix(master ^ mix(stream))
}

/// ChaCha keeps the draw sequence identical across platforms.
pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
