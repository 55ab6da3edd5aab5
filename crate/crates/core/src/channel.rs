//! Multi-user MIMO channel: beam-aligned ray-tracing link responses, AWGN
//! transmission and pilot-noised CSI estimates.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::random::complex_gaussian;

type CMat = ComplexMatrix<f64>;

/// Upper bound of the uniform path-delay distribution, seconds.
pub const MAX_PATH_DELAY: f64 = 1e-6;

/// Default carrier, Hz. With delays up to 1 µs the phase `τ·f` wraps thousands of times.
pub const DEFAULT_CARRIER_HZ: f64 = 3.5e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// Every link is the sum over sampled propagation paths.
    #[default]
    RayTracing,
    /// Entries drawn i.i.d. CN(0, 1) directly.
    Rayleigh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub users: usize,
    pub rx_antennas: usize,
    pub block_length: usize,
    pub power: f64,
    pub data_noise_variance: f64,
    /// `None` means one pilot symbol at power `P`: `σ_H² = σ² / P`.
    pub pilot_noise_variance: Option<f64>,
    pub path_count: usize,
    pub carrier_frequency: f64,
    pub mode: ChannelMode,
    pub rng_seed: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            users: 2,
            rx_antennas: 2,
            block_length: 128,
            power: 1.0,
            data_noise_variance: 1.0,
            pilot_noise_variance: None,
            path_count: 4,
            carrier_frequency: DEFAULT_CARRIER_HZ,
            mode: ChannelMode::RayTracing,
            rng_seed: 0,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(format!("link: {msg}")));
        if self.users == 0 || self.rx_antennas == 0 || self.block_length == 0 || self.path_count == 0 {
            return bad("all counts must be >= 1");
        }
        if self.rx_antennas < self.users {
            return bad("rx_antennas must be >= users for zero-forcing");
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return bad("power must be positive");
        }
        if !(self.data_noise_variance >= 0.0) {
            return bad("data_noise_variance must be >= 0");
        }
        if let Some(v) = self.pilot_noise_variance {
            if !(v >= 0.0) {
                return bad("pilot_noise_variance must be >= 0");
            }
        }
        if !(self.carrier_frequency > 0.0) {
            return bad("carrier_frequency must be positive");
        }
        Ok(())
    }

    /// Effective pilot noise variance `σ_H²`.
    pub fn pilot_noise_variance(&self) -> f64 {
        self.pilot_noise_variance
            .unwrap_or(self.data_noise_variance / self.power)
    }

    /// Copy of this config with both noise variances set from an SNR in dB.
    pub fn at_snr_db(&self, snr_db: f64) -> Self {
        let sigma2 = crate::metrics::snr_db_to_noise_variance(snr_db, self.power);
        Self {
            data_noise_variance: sigma2,
            pilot_noise_variance: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: Complex64,
    /// Seconds.
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub paths: Vec<Path>,
    pub carrier_frequency: f64,
    pub rx_gain: f64,
    pub tx_gain: f64,
}

impl PathSet {
    pub fn new(paths: Vec<Path>, carrier_frequency: f64, rx_gain: f64, tx_gain: f64) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::InvalidParameter("path set needs at least one path".into()));
        }
        if paths
            .iter()
            .any(|p| !(p.delay >= 0.0) || !p.gain.re.is_finite() || !p.gain.im.is_finite())
        {
            return Err(Error::InvalidParameter("path delays must be >= 0 and gains finite".into()));
        }
        if !(carrier_frequency > 0.0 && rx_gain > 0.0 && tx_gain > 0.0) {
            return Err(Error::InvalidParameter("frequency and beam gains must be positive".into()));
        }
        Ok(Self {
            paths,
            carrier_frequency,
            rx_gain,
            tx_gain,
        })
    }

    /// Beam-aligned frequency response `Σ_ℓ α_ℓ e^{-j2π τ_ℓ f} G_rx G_tx`.
    pub fn link_response(&self) -> Complex64 {
        let sum: Complex64 = self
            .paths
            .iter()
            .map(|p| {
                // Reduce the cycle count first so large τ·f keeps full phase precision.
                let cycles = (p.delay * self.carrier_frequency).rem_euclid(1.0);
                p.gain * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * cycles)
            })
            .sum();
        sum * (self.rx_gain * self.tx_gain)
    }
}

/// Draws `L` paths with i.i.d. CN(0, 1/L) gains and delays uniform on `[0, 1 µs]`.
pub fn sample_paths<R: Rng + ?Sized>(cfg: &LinkConfig, rng: &mut R) -> PathSet {
    let l = cfg.path_count.max(1);
    let var = 1.0 / l as f64;
    let paths = (0..l)
        .map(|_| {
            let gain = complex_gaussian(rng, var);
            let delay = rng.random_range(0.0..=MAX_PATH_DELAY);
            Path { gain, delay }
        })
        .collect();
    PathSet {
        paths,
        carrier_frequency: cfg.carrier_frequency,
        rx_gain: 1.0,
        tx_gain: 1.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `M × N`: entry `(j, i)` links user `i` to antenna `j`.
    pub h: CMat,
    /// Row-major over `(antenna, user)`; empty in Rayleigh mode.
    pub paths: Vec<PathSet>,
}

impl ChannelRealization {
    pub fn from_matrix(h: CMat) -> Self {
        Self { h, paths: Vec::new() }
    }
}

pub fn build_channel<R: Rng + ?Sized>(cfg: &LinkConfig, rng: &mut R) -> ChannelRealization {
    let (m, n) = (cfg.rx_antennas, cfg.users);
    match cfg.mode {
        ChannelMode::Rayleigh => {
            ChannelRealization::from_matrix(CMat::from_fn(m, n, |_, _| complex_gaussian(rng, 1.0)))
        }
        ChannelMode::RayTracing => {
            let paths: Vec<PathSet> = (0..m * n).map(|_| sample_paths(cfg, rng)).collect();
            let h = CMat::from_fn(m, n, |j, i| paths[j * n + i].link_response());
            ChannelRealization { h, paths }
        }
    }
}

/// `Y = H X + Z`, `Z` i.i.d. CN(0, σ²).
pub fn transmit<R: Rng + ?Sized>(h: &CMat, x: &CMat, noise_variance: f64, rng: &mut R) -> Result<CMat> {
    let mut y = h.matmul(x)?;
    if noise_variance > 0.0 {
        for v in y.as_mut_slice() {
            *v += complex_gaussian(rng, noise_variance);
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsiEstimate {
    pub h_hat: CMat,
    /// Per complex entry.
    pub noise_variance: f64,
}

/// Pilot-based estimate `Ĥ = H + Z_H`, `Z_H` i.i.d. CN(0, σ_H²).
pub fn estimate_csi<R: Rng + ?Sized>(truth: &ChannelRealization, noise_variance: f64, rng: &mut R) -> Result<CsiEstimate> {
    if !(noise_variance >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "pilot noise variance must be >= 0, got {noise_variance}"
        )));
    }
    let mut h_hat = truth.h.clone();
    if noise_variance > 0.0 {
        for v in h_hat.as_mut_slice() {
            *v += complex_gaussian(rng, noise_variance);
        }
    }
    Ok(CsiEstimate {
        h_hat,
        noise_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::rng_from_seed;

    fn cfg(l: usize) -> LinkConfig {
        LinkConfig {
            path_count: l,
            ..LinkConfig::default()
        }
    }

    #[test]
    fn sample_paths_single_and_reproducible() {
        let p = sample_paths(&cfg(1), &mut rng_from_seed(3));
        assert_eq!(p.paths.len(), 1);
        assert_eq!((p.rx_gain, p.tx_gain), (1.0, 1.0));

        let a = sample_paths(&cfg(4), &mut rng_from_seed(9));
        let b = sample_paths(&cfg(4), &mut rng_from_seed(9));
        assert_eq!(a, b);
        assert!(a.paths.iter().all(|p| (0.0..=MAX_PATH_DELAY).contains(&p.delay)));
    }

    #[test]
    fn sample_paths_unit_link_power() {
        let mut rng = rng_from_seed(11);
        let n = 100_000;
        let c = cfg(4);
        let mean: f64 = (0..n)
            .map(|_| sample_paths(&c, &mut rng).paths.iter().map(|p| p.gain.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn link_response_examples() {
        let one = |delay: f64, f: f64, g: f64| {
            PathSet::new(vec![Path { gain: Complex64::new(1.0, 0.0), delay }], f, g, g).unwrap()
        };
        assert_eq!(one(0.0, 1e9, 1.5).link_response(), Complex64::new(2.25, 0.0));

        let r = one(0.5e-9, 1e9, 1.0).link_response();
        assert!((r - Complex64::new(-1.0, 0.0)).norm() < 1e-15);

        let two = PathSet::new(
            vec![
                Path { gain: Complex64::new(1.0, 0.0), delay: 0.2e-9 },
                Path { gain: Complex64::new(1.0, 0.0), delay: 0.7e-9 },
            ],
            1e9,
            1.0,
            1.0,
        )
        .unwrap();
        assert!(two.link_response().norm() < 1e-15);
    }

    #[test]
    fn path_set_validation() {
        assert!(PathSet::new(vec![], 1e9, 1.0, 1.0).is_err());
        let p = Path { gain: Complex64::new(1.0, 0.0), delay: -1.0 };
        assert!(PathSet::new(vec![p], 1e9, 1.0, 1.0).is_err());
    }

    #[test]
    fn build_channel_deterministic_and_degenerate() {
        let a = build_channel(&cfg(3), &mut rng_from_seed(5));
        let b = build_channel(&cfg(3), &mut rng_from_seed(5));
        assert_eq!(a, b);
        assert_eq!(a.h.shape(), (2, 2));
        assert_eq!(a.paths.len(), 4);

        // Unit gains with zero delay give the all-ones matrix.
        let mut degenerate = a.clone();
        for ps in &mut degenerate.paths {
            ps.paths = vec![Path { gain: Complex64::new(1.0, 0.0), delay: 0.0 }];
        }
        let ones = CMat::from_fn(2, 2, |j, i| degenerate.paths[j * 2 + i].link_response());
        assert!(ones.as_slice().iter().all(|&z| z == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn rayleigh_entry_variance() {
        let c = LinkConfig {
            rx_antennas: 100,
            users: 100,
            mode: ChannelMode::Rayleigh,
            ..LinkConfig::default()
        };
        let mut rng = rng_from_seed(2);
        let total: f64 = (0..10).map(|_| build_channel(&c, &mut rng).h.frobenius_norm_sq()).sum();
        let v = total / 100_000.0;
        assert!((v - 1.0).abs() < 0.02, "{v}");
    }

    #[test]
    fn ray_tracing_entry_variance() {
        let c = LinkConfig {
            rx_antennas: 4,
            users: 4,
            ..cfg(4)
        };
        let mut rng = rng_from_seed(21);
        let trials = 5000;
        let total: f64 = (0..trials).map(|_| build_channel(&c, &mut rng).h.frobenius_norm_sq()).sum();
        let v = total / (16.0 * trials as f64);
        assert!((v - 1.0).abs() < 0.03, "{v}");
    }

    #[test]
    fn transmit_cases() {
        let mut rng = rng_from_seed(1);
        let i = CMat::identity(2);
        assert_eq!(transmit(&i, &i, 0.0, &mut rng).unwrap(), i);

        let h = build_channel(&cfg(2), &mut rng).h;
        let x = CMat::from_fn(2, 3, |r, c| Complex64::new(r as f64, c as f64));
        assert_eq!(transmit(&h, &x, 0.0, &mut rng).unwrap(), h.matmul(&x).unwrap());

        assert!(transmit(&h, &CMat::zeros(3, 1), 0.0, &mut rng).is_err());

        let zeros = CMat::zeros(2, 50_000);
        let y = transmit(&i, &zeros, 1.0, &mut rng).unwrap();
        let v = y.frobenius_norm_sq() / 100_000.0;
        assert!((v - 1.0).abs() < 0.02, "{v}");
    }

    #[test]
    fn zero_noise_zf_recovers_symbols() {
        let mut rng = rng_from_seed(8);
        let h = build_channel(&cfg(4), &mut rng).h;
        let x = CMat::from_fn(2, 16, |_, _| complex_gaussian(&mut rng, 1.0));
        let y = transmit(&h, &x, 0.0, &mut rng).unwrap();
        let xh = h.solve_least_squares(&y).unwrap();
        let rel = xh.sub(&x).unwrap().frobenius_norm_sq().sqrt() / x.frobenius_norm_sq().sqrt();
        assert!(rel < 1e-9, "{rel}");
    }

    #[test]
    fn estimate_csi_cases() {
        let mut rng = rng_from_seed(4);
        let truth = build_channel(&cfg(4), &mut rng);
        let perfect = estimate_csi(&truth, 0.0, &mut rng).unwrap();
        assert_eq!(perfect.h_hat, truth.h);

        let a = estimate_csi(&truth, 0.3, &mut rng_from_seed(6)).unwrap();
        let b = estimate_csi(&truth, 0.3, &mut rng_from_seed(6)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.noise_variance, 0.3);
        assert!(estimate_csi(&truth, -1.0, &mut rng).is_err());
    }

    #[test]
    fn estimate_csi_nmse_matches_noise_model() {
        // Fixed H: E‖Ĥ − H‖² / ‖H‖² = σ_H² M N / ‖H‖².
        let mut rng = rng_from_seed(12);
        let truth = build_channel(&cfg(4), &mut rng);
        let s2 = 0.25;
        let trials = 20_000;
        let mean: f64 = (0..trials)
            .map(|_| {
                let e = estimate_csi(&truth, s2, &mut rng).unwrap();
                e.h_hat.sub(&truth.h).unwrap().frobenius_norm_sq() / truth.h.frobenius_norm_sq()
            })
            .sum::<f64>()
            / trials as f64;
        let expected = s2 * 4.0 / truth.h.frobenius_norm_sq();
        assert!((mean / expected - 1.0).abs() < 0.05, "{mean} vs {expected}");
    }

    #[test]
    fn config_validation() {
        assert!(LinkConfig::default().validate().is_ok());
        let c = LinkConfig { rx_antennas: 1, ..LinkConfig::default() };
        assert!(c.validate().is_err());
        let c = LinkConfig { power: 0.0, ..LinkConfig::default() };
        assert!(c.validate().is_err());
        let c = LinkConfig { power: 2.0, data_noise_variance: 0.5, ..LinkConfig::default() };
        assert_eq!(c.pilot_noise_variance(), 0.25);
    }
}
