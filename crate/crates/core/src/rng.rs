//! Seed plumbing. Every randomized operation takes an explicit u64 seed and
//! builds its own ChaCha8 stream, so runs are bit-reproducible and parallel
//! stages cannot interleave draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates nearby seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed for a tagged stage (epoch index, domain
/// index, repeat index, ...).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    mix(base ^ mix(tag))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
