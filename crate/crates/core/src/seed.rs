//! Seed derivation. Every random stream in the crate is keyed by a value
//! derived here, so results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xCBF2_9CE4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3))
}

/// Seed for one node of a job: `splitmix64(job_seed ^ splitmix64(fnv1a64(node_id)))`.
pub fn node_seed(job_seed: u64, node_id: &str) -> u64 {
    splitmix64(job_seed ^ splitmix64(fnv1a64(node_id.as_bytes())))
}

/// Seed for sample `index` of a batch run: `splitmix64(splitmix64(seed) ^ index)`.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index)
}

/// Independent sub-stream of `seed` identified by `stream`.
pub fn substream(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_mul(0xD6E8_FEB8_6659_FD93)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
