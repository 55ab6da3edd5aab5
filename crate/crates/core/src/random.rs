//! Seeded generators and the seed-splitting rule used across the simulator.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// The generator used everywhere; ChaCha output is identical on every platform.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a small index tuple, built by chaining [`mix64`].
pub fn hash_indices(indices: &[u64]) -> u64 {
    indices.iter().fold(0x243F_6A88_85A3_08D3, |h, &i| mix64(h ^ mix64(i)))
}

/// Per-trial seed: `master ⊕ hash(snr_index, mode_index, trial_index)`.
pub fn trial_seed(master: u64, snr_index: usize, mode_index: usize, trial_index: usize) -> u64 {
    master ^ hash_indices(&[snr_index as u64, mode_index as u64, trial_index as u64])
}

/// Derives an independent sub-stream seed for a named purpose within one trial.
pub fn substream(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_add(0xA5A5_5A5A)))
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Circularly-symmetric complex Gaussian with total variance `var`
/// (each of re/im has variance `var / 2`).
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    Complex64::new(s * standard_normal(rng), s * standard_normal(rng))
}
