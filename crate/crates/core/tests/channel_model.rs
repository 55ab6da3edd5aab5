use dmce::channel::{build_channel, estimate_csi, transmit, ChannelMode, LinkConfig};
use dmce::metrics::nmse_db;
use dmce::random::{complex_gaussian, rng_from_seed};
use dmce::ComplexMatrixF64;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Average pilot NMSE in dB against `10·log10(σ_H²·M·N / E‖H‖²)`.
fn pilot_nmse_gap(cfg: &LinkConfig, sigma_h2: f64, trials: usize, seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let mut db = Vec::with_capacity(trials);
    let mut energy = 0.0;
    for _ in 0..trials {
        let ch = build_channel(cfg, &mut rng);
        energy += ch.h.frobenius_norm_sq();
        let est = estimate_csi(&ch, sigma_h2, &mut rng).unwrap();
        db.push(nmse_db(&est.h_hat, &ch.h).unwrap());
    }
    let mn = (cfg.rx_antennas * cfg.users) as f64;
    let expected = 10.0 * (sigma_h2 * mn / (energy / trials as f64)).log10();
    mean(&db) - expected
}

#[test]
fn pilot_nmse_in_db_matches_noise_model() {
    for (mode, m, n) in [
        (ChannelMode::RayTracing, 2, 2),
        (ChannelMode::Rayleigh, 2, 2),
        (ChannelMode::RayTracing, 4, 2),
    ] {
        let cfg = LinkConfig {
            mode,
            rx_antennas: m,
            users: n,
            ..LinkConfig::default()
        };
        for (k, sigma) in [0.01, 0.3, 1.0, 2.5].into_iter().enumerate() {
            let gap = pilot_nmse_gap(&cfg, sigma, 20_000, 17 + k as u64);
            assert!(gap.abs() < 0.2, "{mode:?} {m}x{n} sigma {sigma}: gap {gap:.3} dB");
        }
    }
}

#[test]
fn realizations_are_bit_identical_per_seed() {
    let cfg = LinkConfig::default();
    let draw = |seed| {
        let mut rng = rng_from_seed(seed);
        let ch = build_channel(&cfg, &mut rng);
        let est = estimate_csi(&ch, 0.2, &mut rng).unwrap();
        (ch, est)
    };
    assert_eq!(draw(5), draw(5));
    assert_ne!(draw(5).0, draw(6).0);
}

#[test]
fn noiseless_transmission_is_inverted_by_the_true_channel() {
    let mut rng = rng_from_seed(8);
    for k in 0..200 {
        let cfg = LinkConfig {
            rx_antennas: [2, 3, 4][k % 3],
            users: 1 + k % 2,
            ..LinkConfig::default()
        };
        let ch = build_channel(&cfg, &mut rng);
        let x = ComplexMatrixF64::from_fn(cfg.users, 16, |_, _| complex_gaussian(&mut rng, 1.0));
        let y = transmit(&ch.h, &x, 0.0, &mut rng).unwrap();
        let x_hat = ch.h.solve_least_squares(&y).unwrap();
        let rel = (x_hat.sub(&x).unwrap().frobenius_norm_sq() / x.frobenius_norm_sq()).sqrt();
        assert!(rel < 1e-9, "trial {k}: {rel:e}");
    }
}
