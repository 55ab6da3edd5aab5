//! Fast built-in invariant checks, runnable from the command line.

use num_complex::Complex64;
use rand::Rng;

use crate::diffusion::{denoise, EpsilonModel, NoiseSchedule, Sampler};
use crate::error::Result;
use crate::experiments::csi_file::{read_csi, write_csi};
use crate::linalg::ComplexMatrix;
use crate::metrics::{miou, nmse_db};
use crate::neuralnet::Mlp;
use crate::random::{complex_gaussian, rng_from_seed, SimRng};
use crate::semantic::{power_normalize, SegmentationMap};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64) -> Check {
    Check {
        name,
        passed: worst <= tol,
        detail: format!("worst {worst:.3e} (tolerance {tol:.0e})"),
    }
}

fn random_matrix(rng: &mut SimRng, m: usize, n: usize) -> ComplexMatrix<f64> {
    ComplexMatrix::from_fn(m, n, |_, _| complex_gaussian(rng, 1.0))
}

fn zero_forcing(rng: &mut SimRng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let (m, n) = ([2, 4][k % 2], [1, 2][(k / 2) % 2]);
        let h = random_matrix(rng, m, n);
        let x = random_matrix(rng, n, 8);
        let x_hat = h.solve_least_squares(&h.matmul(&x)?)?;
        worst = worst.max(x_hat.sub(&x)?.frobenius_norm_sq().sqrt() / x.frobenius_norm_sq().sqrt());
    }
    Ok(worst)
}

fn power(rng: &mut SimRng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let raw: Vec<f64> = (0..16).map(|_| rng.random_range(-5.0..5.0)).collect();
        let p = rng.random_range(0.1..4.0);
        let e: f64 = power_normalize(&raw, p, 8)?.iter().map(|v| v * v).sum();
        worst = worst.max((e - 8.0 * p).abs() / (8.0 * p));
    }
    Ok(worst)
}

struct Oracle(Vec<f64>, NoiseSchedule<f64>);

impl EpsilonModel<f64> for Oracle {
    fn predict_eps(&self, xt: &[f64], t: usize, _: usize, _: &[f64]) -> Result<Vec<f64>> {
        let a = self.1.alpha_bar(t);
        Ok(xt
            .iter()
            .zip(&self.0)
            .map(|(x, x0)| (x - a.sqrt() * x0) / (1.0 - a).sqrt())
            .collect())
    }
}

fn diffusion(rng: &mut SimRng) -> Result<(bool, f64)> {
    let s = NoiseSchedule::<f64>::linear(1000, 1e-4, 0.02)?;
    let monotone = s.alpha_bars().windows(2).all(|w| w[1] < w[0]);
    let mut last = 0;
    let mut entry_monotone = true;
    for i in 0..400 {
        let t = s.select_entry_step(10f64.powf(-4.0 + i as f64 * 0.02));
        entry_monotone &= t >= last;
        last = t;
    }
    let x0: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
    let oracle = Oracle(x0.clone(), s.clone());
    let mut worst: f64 = 0.0;
    for ratio in [1e-4f64, 1e-3, 5e-3] {
        let noisy: Vec<f64> = x0.iter().map(|v| v + ratio.sqrt() * rng.random_range(-1.0..1.0)).collect();
        let (out, _) = denoise(&oracle, &noisy, ratio, &s, Sampler::Ancestral, rng)?;
        worst = worst.max(out.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    Ok((monotone && entry_monotone, worst))
}

fn gradient(rng: &mut SimRng) -> Result<f64> {
    let mut net = Mlp::<f64>::new(&[5, 7, 3], rng)?;
    let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, cache) = net.forward(&x)?;
    let (g, _) = net.backward(&cache, &w)?;
    let analytic: Vec<f64> = g.values().cloned().collect();
    let mut params = net.params();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let orig = params[i];
        let eval = |v: f64, net: &mut Mlp<f64>, params: &mut Vec<f64>| -> Result<f64> {
            params[i] = v;
            net.set_params(params)?;
            Ok(net.predict(&x)?.iter().zip(&w).map(|(a, b)| a * b).sum())
        };
        let up = eval(orig + 1e-6, &mut net, &mut params)?;
        let down = eval(orig - 1e-6, &mut net, &mut params)?;
        eval(orig, &mut net, &mut params)?;
        let num = (up - down) / 2e-6;
        worst = worst.max((analytic[i] - num).abs() / num.abs().max(1e-2));
    }
    Ok(worst)
}

fn metrics() -> Result<f64> {
    let truth = SegmentationMap::new(2, 2, 2, vec![0, 0, 1, 1])?;
    let pred = SegmentationMap::new(2, 2, 2, vec![0, 0, 0, 0])?;
    let eye = ComplexMatrix::<f64>::identity(2);
    let mut est = eye.clone();
    est[(0, 0)] = Complex64::new(1.1, 0.0);
    est[(1, 1)] = Complex64::new(0.9, 0.0);
    Ok([
        (miou(&pred, &truth)? - 0.25).abs(),
        (miou(&truth, &truth)? - 1.0).abs(),
        (nmse_db(&est, &eye)? + 20.0).abs(),
        nmse_db(&eye.scale(2.0), &eye)?.abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max))
}

fn csi_round_trip(rng: &mut SimRng) -> Result<bool> {
    let h = random_matrix(rng, 3, 2);
    let mut a = Vec::new();
    write_csi(&mut a, &h, 0.3)?;
    let (back, s) = read_csi(a.as_slice())?;
    let mut b = Vec::new();
    write_csi(&mut b, &back, s)?;
    Ok(back == h && a == b)
}

/// Runs every check; an `Err` means a check could not run at all.
pub fn run_selftest(seed: u64) -> Result<Vec<Check>> {
    let mut rng = rng_from_seed(seed);
    let (ordered, chain) = diffusion(&mut rng)?;
    let csi = csi_round_trip(&mut rng)?;
    Ok(vec![
        check("zero-forcing recovery", zero_forcing(&mut rng)?, 1e-9),
        check("power normalization", power(&mut rng)?, 1e-9),
        Check {
            name: "schedule monotonicity",
            passed: ordered,
            detail: "alpha_bar decreasing, entry step nondecreasing".into(),
        },
        check("oracle reverse chain", chain, 1e-8),
        check("mlp gradient", gradient(&mut rng)?, 1e-4),
        check("metric hand cases", metrics()?, 1e-12),
        Check {
            name: "csi file round trip",
            passed: csi,
            detail: "byte-stable".into(),
        },
    ])
}
