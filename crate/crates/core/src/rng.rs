//! Seeded random streams.
//!
//! Every stochastic component draws from a ChaCha stream derived from a base
//! seed and a list of tags (purpose, epoch, sample index, ...). Streams are
//! independent of evaluation order, so parallel work stays reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Stream = ChaCha8Rng;

pub mod tags {
    pub const INITIAL_CONDITIONS: u64 = 0x1c;
    pub const POLICY_INIT: u64 = 0x1f;
    pub const SHUFFLE: u64 = 0x5f;
    pub const TEST_SET: u64 = 0x7e;
    pub const SYSTEM: u64 = 0x5a;
    pub const SAMPLER: u64 = 0x5b;
    pub const EXPERT: u64 = 0xe0;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed from a base seed and a tag path.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Opens the stream identified by `(seed, tags)`.
pub fn stream(seed: u64, tags: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Draws a vector of i.i.d. N(0, std²) entries.
pub fn gaussian_vec<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize, std: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}

/// Draws a vector uniformly from the cube [-half_width, half_width]^dim.
pub fn uniform_vec<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize, half_width: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| half_width * (2.0 * rng.random::<f64>() - 1.0))
        .collect()
}
