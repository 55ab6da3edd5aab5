//! DDPM variance schedule and the closed-form forward / single reverse step.
//!
//! Steps are 1-based throughout: `beta(1)` is the first step and `alpha_bar(0)`
//! is defined as 1.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<T> {
    beta: Vec<T>,
    alpha: Vec<T>,
    alpha_bar: Vec<T>,
}

impl<T: Scalar> NoiseSchedule<T> {
    /// `β_t = β₁ + (t − 1)(β_T − β₁)/(T − 1)` for `t = 1..=T`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidParameter(format!("schedule needs T >= 2, got {steps}")));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let step = (beta_end - beta_start) / (steps - 1) as f64;
        let beta: Vec<T> = (0..steps).map(|i| T::lit(beta_start + i as f64 * step)).collect();
        Ok(Self::from_betas(beta))
    }

    /// Builds α and ᾱ from an arbitrary β table (`β[0]` is step 1).
    pub fn from_betas(beta: Vec<T>) -> Self {
        let alpha: Vec<T> = beta.iter().map(|&b| T::one() - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = T::one();
        for &a in &alpha {
            acc = acc * a;
            alpha_bar.push(acc);
        }
        Self { beta, alpha, alpha_bar }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> T {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> T {
        self.alpha[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> T {
        if t == 0 {
            T::one()
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn betas(&self) -> &[T] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bar
    }

    /// Noise-to-signal ratio `(1 − ᾱ_t)/ᾱ_t` of the forward marginal at step `t`.
    pub fn noise_to_signal(&self, t: usize) -> T {
        let ab = self.alpha_bar(t);
        (T::one() - ab) / ab
    }

    /// Posterior variance `β̃_t = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`.
    pub fn posterior_variance(&self, t: usize) -> T {
        self.beta(t) * (T::one() - self.alpha_bar(t - 1)) / (T::one() - self.alpha_bar(t))
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidParameter(format!(
                "diffusion step {t} outside [1, {}]",
                self.steps()
            )));
        }
        Ok(())
    }

    /// `x_t = √ᾱ_t x₀ + √(1 − ᾱ_t) ε`.
    pub fn q_sample(&self, x0: &[T], t: usize, eps: &[T]) -> Result<Vec<T>> {
        self.check_step(t)?;
        check_len("q_sample", x0, eps)?;
        let ab = self.alpha_bar(t);
        let (s, n) = (ab.sqrt(), (T::one() - ab).sqrt());
        Ok(x0.iter().zip(eps).map(|(&x, &e)| s * x + n * e).collect())
    }

    /// Recovers `x₀` from `x_t` given the exact noise, inverting [`NoiseSchedule::q_sample`].
    pub fn predict_x0(&self, xt: &[T], t: usize, eps: &[T]) -> Result<Vec<T>> {
        self.check_step(t)?;
        check_len("predict_x0", xt, eps)?;
        let ab = self.alpha_bar(t);
        let (s, n) = (ab.sqrt(), (T::one() - ab).sqrt());
        Ok(xt.iter().zip(eps).map(|(&x, &e)| (x - n * e) / s).collect())
    }

    /// Mean of `p(x_{t−1} | x_t)`: `(x_t − β_t/√(1 − ᾱ_t) · ε̂) / √α_t`.
    pub fn reverse_mean(&self, xt: &[T], t: usize, eps_hat: &[T]) -> Result<Vec<T>> {
        self.check_step(t)?;
        check_len("reverse_mean", xt, eps_hat)?;
        let coef = self.beta(t) / (T::one() - self.alpha_bar(t)).sqrt();
        let inv_sqrt_alpha = T::one() / self.alpha(t).sqrt();
        Ok(xt
            .iter()
            .zip(eps_hat)
            .map(|(&x, &e)| (x - coef * e) * inv_sqrt_alpha)
            .collect())
    }

    /// One ancestral step: reverse mean plus `√β̃_t z`, with `z = 0` at `t = 1`.
    pub fn reverse_step<R: Rng + ?Sized>(&self, xt: &[T], t: usize, eps_hat: &[T], rng: &mut R) -> Result<Vec<T>> {
        let mut out = self.reverse_mean(xt, t, eps_hat)?;
        if t > 1 {
            let sd = self.posterior_variance(t).sqrt();
            for v in &mut out {
                let z: f64 = rng.sample(StandardNormal);
                *v = *v + sd * T::lit(z);
            }
        }
        Ok(out)
    }

    /// Step whose noise-to-signal ratio is closest to `noise_ratio`, ties to the smaller step.
    pub fn select_entry_step(&self, noise_ratio: T) -> usize {
        let mut best = 1;
        let mut best_gap = T::infinity();
        for t in 1..=self.steps() {
            let gap = (noise_ratio - self.noise_to_signal(t)).abs();
            if gap < best_gap {
                best = t;
                best_gap = gap;
            }
        }
        best
    }
}

fn check_len<T>(op: &'static str, a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dims(op, (a.len(), 1), (b.len(), 1)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::rng_from_seed;

    fn paper() -> NoiseSchedule<f64> {
        NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn linear_schedule_values() {
        let s = paper();
        assert_eq!(s.steps(), 1000);
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(1000) - 0.02).abs() < 1e-17);
        let b500 = 1e-4 + 499.0 * (0.0199 / 999.0);
        assert!((s.beta(500) - b500).abs() < 1e-17);
        assert_eq!(s.alpha_bar(1), 0.9999);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn schedule_invariants() {
        let s = paper();
        for t in 1..=1000 {
            assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            assert_eq!(s.alpha(t), 1.0 - s.beta(t));
            assert_eq!(s.alpha_bar(t), s.alpha_bar(t - 1) * s.alpha(t));
            assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < 1.0);
            if t > 1 {
                assert!(s.beta(t) > s.beta(t - 1));
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                assert!(s.noise_to_signal(t) > s.noise_to_signal(t - 1));
            }
        }
    }

    #[test]
    fn linear_schedule_rejects_bad_params() {
        assert!(NoiseSchedule::<f64>::linear(1, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.03, 0.02).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.01, 1.0).is_err());
    }

    #[test]
    fn q_sample_edge_cases() {
        let s = paper();
        let x0 = [0.5, -1.0, 2.0];
        let zero = [0.0; 3];
        let eps = [0.1, 0.2, -0.3];
        let t = 400;
        let a = s.q_sample(&x0, t, &zero).unwrap();
        for (v, x) in a.iter().zip(&x0) {
            assert_eq!(*v, s.alpha_bar(t).sqrt() * x);
        }
        let b = s.q_sample(&zero, t, &eps).unwrap();
        for (v, e) in b.iter().zip(&eps) {
            assert_eq!(*v, (1.0 - s.alpha_bar(t)).sqrt() * e);
        }
        let back = s.predict_x0(&s.q_sample(&x0, t, &eps).unwrap(), t, &eps).unwrap();
        for (v, x) in back.iter().zip(&x0) {
            assert!((v - x).abs() < 1e-12);
        }
        assert!(s.q_sample(&x0, 0, &eps).is_err());
        assert!(s.q_sample(&x0, 1001, &eps).is_err());
        assert!(s.q_sample(&x0, 3, &eps[..2]).is_err());
    }

    #[test]
    fn entry_step_edges() {
        let s = paper();
        assert_eq!(s.select_entry_step(0.0), 1);
        assert_eq!(s.select_entry_step(s.noise_to_signal(1000)), 1000);
        assert_eq!(s.select_entry_step(1e9), 1000);
        // Exhaustive scan as an independent oracle.
        let target = 0.01;
        let oracle = (1..=1000)
            .map(|t| (t, (target - (1.0 - s.alpha_bar(t)) / s.alpha_bar(t)).abs()))
            .fold((0, f64::INFINITY), |acc, (t, g)| if g < acc.1 { (t, g) } else { acc })
            .0;
        assert_eq!(s.select_entry_step(target), oracle);
    }

    #[test]
    fn reverse_step_final_step_inverts_forward() {
        let s = paper();
        let x0 = [0.7, -0.2, 1.3, 0.0];
        let eps = [1.1, -0.4, 0.3, -2.0];
        let x1 = s.q_sample(&x0, 1, &eps).unwrap();
        let out = s.reverse_step(&x1, 1, &eps, &mut rng_from_seed(0)).unwrap();
        for (v, x) in out.iter().zip(&x0) {
            assert!((v - x).abs() < 1e-10);
        }
    }

    #[test]
    fn reverse_step_zero_prediction_rescales() {
        let s = paper();
        let xt = [1.0, -2.0];
        let t = 10;
        let mean = s.reverse_mean(&xt, t, &[0.0, 0.0]).unwrap();
        for (m, x) in mean.iter().zip(&xt) {
            assert!((m - x / s.alpha(t).sqrt()).abs() < 1e-15);
        }
        // Monte-Carlo mean of the noisy step converges to the rescale.
        let mut rng = rng_from_seed(2);
        let n = 20_000;
        let mut acc = 0.0;
        for _ in 0..n {
            acc += s.reverse_step(&xt, t, &[0.0, 0.0], &mut rng).unwrap()[0];
        }
        let sd = s.posterior_variance(t).sqrt() / (n as f64).sqrt();
        assert!((acc / n as f64 - mean[0]).abs() < 5.0 * sd);

        let a = s.reverse_step(&xt, 500, &[0.1, 0.1], &mut rng_from_seed(3)).unwrap();
        let b = s.reverse_step(&xt, 500, &[0.1, 0.1], &mut rng_from_seed(3)).unwrap();
        assert_eq!(a, b);
    }
}
