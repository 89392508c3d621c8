//! Deterministic RNG stream derivation.
//!
//! Every random quantity in the crate is drawn from a [`ChaCha8Rng`] whose
//! seed is derived from a master seed and a path of integer labels
//! (repetition index, trajectory index, permutation index, ...). The split
//! function is
//!
//! ```text
//! s_0     = master
//! s_{k+1} = splitmix64(s_k ^ splitmix64(label_k + 0x9E3779B97F4A7C15))
//! ```
//!
//! and the stream RNG is `ChaCha8Rng::seed_from_u64(s_len)`. Because each
//! stream depends only on its labels, results do not depend on how many
//! trajectories are requested in a call or how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a path of labels.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |s, &label| {
        splitmix64(s ^ splitmix64(label.wrapping_add(0x9E37_79B9_7F4A_7C15)))
    })
}

/// RNG for the stream identified by `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

/// Fill `out` with independent standard normal draws.
pub fn fill_standard_normal<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
