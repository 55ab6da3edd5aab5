//! The channel enhancer: enter the reverse chain at the step whose noise level
//! matches the estimate and run it down to `t = 1`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::CsiEstimate;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::neuralnet::{normalized_vector, NoisePredictor};
use crate::scalar::Scalar;

/// Anything that predicts the noise component of `x_t`.
pub trait EpsilonModel<T> {
    /// `condition` is the normalized estimate the chain was entered from.
    fn predict_eps(&self, xt: &[T], t: usize, steps: usize, condition: &[T]) -> Result<Vec<T>>;
}

/// How each reverse step is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Reverse mean only (`z = 0` at every step).
    #[default]
    Deterministic,
    /// Reverse mean plus `√β̃_t z` for `t > 1`.
    Ancestral,
}

/// Real parts row-major, then imaginary parts row-major.
pub fn complex_to_real(m: &ComplexMatrix<f64>) -> Vec<f64> {
    let s = m.as_slice();
    s.iter().map(|z| z.re).chain(s.iter().map(|z| z.im)).collect()
}

pub fn real_to_complex(v: &[f64], rows: usize, cols: usize) -> Result<ComplexMatrix<f64>> {
    let n = rows * cols;
    if v.len() != 2 * n {
        return Err(Error::dims("real_to_complex", (2 * n, 1), (v.len(), 1)));
    }
    ComplexMatrix::from_vec(rows, cols, (0..n).map(|k| Complex64::new(v[k], v[n + k])).collect())
}

/// Runs the reverse chain on `noisy`, a unit-signal-power vector whose additive
/// noise has variance `noise_ratio` per element. Returns the denoised vector and
/// the entry step.
pub fn denoise<T: Scalar, M: EpsilonModel<T>, R: Rng + ?Sized>(
    model: &M,
    noisy: &[T],
    noise_ratio: T,
    schedule: &NoiseSchedule<T>,
    sampler: Sampler,
    rng: &mut R,
) -> Result<(Vec<T>, usize)> {
    let entry = schedule.select_entry_step(noise_ratio);
    let scale = schedule.alpha_bar(entry).sqrt();
    let mut x: Vec<T> = noisy.iter().map(|&v| v * scale).collect();
    for t in (1..=entry).rev() {
        let eps = model.predict_eps(&x, t, schedule.steps(), noisy)?;
        x = match sampler {
            Sampler::Deterministic => schedule.reverse_mean(&x, t, &eps)?,
            Sampler::Ancestral => schedule.reverse_step(&x, t, &eps, rng)?,
        };
    }
    Ok((x, entry))
}

/// `H̃ = F_D(Ĥ)`.
///
/// The estimate is scaled to unit per-element power with the predictor's
/// training power `p̂`, so its noise ratio is `σ_H² / p̂`; the chain then starts
/// from `√ᾱ_{t_s} · Ĥ`.
pub fn enhance_csi<T: Scalar, R: Rng + ?Sized>(
    predictor: &NoisePredictor<T>,
    est: &CsiEstimate,
    schedule: &NoiseSchedule<T>,
    sampler: Sampler,
    rng: &mut R,
) -> Result<ComplexMatrix<f64>> {
    let (m, n) = est.h_hat.shape();
    if 2 * m * n != predictor.data_dim() {
        return Err(Error::dims(
            "enhance_csi",
            (predictor.data_dim() / 2, 1),
            (m, n),
        ));
    }
    let power = predictor.signal_power();
    let noisy: Vec<T> = normalized_vector(&est.h_hat, power);
    let ratio = T::lit(est.noise_variance / power);
    let (clean, _) = denoise(predictor, &noisy, ratio, schedule, sampler, rng)?;
    let unscale = (power / 2.0).sqrt();
    let flat: Vec<f64> = clean.iter().map(|v| v.as_f64() * unscale).collect();
    real_to_complex(&flat, m, n)
}
