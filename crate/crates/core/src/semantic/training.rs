//! Codec training: end-to-end through an ideal channel, then decoder
//! fine-tuning through the impaired link.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::channel::{build_channel, LinkConfig};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::neuralnet::{train_noise_predictor, NoisePredictor, PredictorArch, TrainConfig, TrainReport};
use crate::random::{rng_from_seed, SimRng};
use crate::semantic::codec::{CodecGradients, Codecs};
use crate::semantic::link::{simulate_symbols, Enhancer, LinkMode, LinkSystem};
use crate::semantic::scene::{generate_scene, SceneConfig};

/// Trains every codec network end to end with `H = I` and no noise, so the
/// equalized symbols equal the transmitted ones.
pub fn train_stage1(codecs: &mut Codecs, scene: &SceneConfig, power: f64, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    scene.validate()?;
    if scene.modalities() != codecs.dims.users {
        return Err(Error::dims("stage1", (codecs.dims.users, 1), (scene.modalities(), 1)));
    }
    let mut rng = rng_from_seed(cfg.rng_seed);
    let weight = 1.0 / cfg.batch_size as f64;
    let mut report = TrainReport {
        step_losses: Vec::with_capacity(cfg.epochs * cfg.steps_per_epoch),
        epoch_losses: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut epoch_loss = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let mut grads = CodecGradients::zeros_like(codecs);
            let mut batch_loss = 0.0;
            for _ in 0..cfg.batch_size {
                let s = generate_scene(&mut rng, scene);
                let (_, trace) = codecs.forward_identity(&s.modalities, power)?;
                batch_loss += codecs.backward_identity(&trace, &s.truth, power, weight, &mut grads)?;
            }
            batch_loss *= weight;
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            codecs.apply_encoders(&grads, lr)?;
            codecs.apply_decoders(&grads, lr)?;
            if !codecs.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            report.step_losses.push(batch_loss);
            epoch_loss += batch_loss;
        }
        report.epoch_losses.push(epoch_loss / cfg.steps_per_epoch as f64);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage3Config {
    pub train: TrainConfig,
    /// Each sample draws its SNR uniformly from this range, dB.
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub mode: LinkMode,
}

impl Default for Stage3Config {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                learning_rate: 0.05,
                decay: 0.9,
                epochs: 8,
                batch_size: 16,
                steps_per_epoch: 100,
                rng_seed: 0,
            },
            snr_db_min: -4.0,
            snr_db_max: 12.0,
            mode: LinkMode::Dmce,
        }
    }
}

/// Fine-tunes the two decoders through the full impaired link. Encoders and
/// enhancers are read-only; equalization and enhancement are constants of
/// the forward pass.
pub fn train_stage3(
    codecs: &mut Codecs,
    scene: &SceneConfig,
    dmce: Option<&Enhancer>,
    y_denoiser: Option<&Enhancer>,
    link: &LinkConfig,
    cfg: &Stage3Config,
) -> Result<TrainReport> {
    let tc = &cfg.train;
    tc.validate()?;
    if !(cfg.snr_db_min <= cfg.snr_db_max) {
        return Err(Error::InvalidParameter("stage3: snr_db_min > snr_db_max".into()));
    }
    let mut rng = rng_from_seed(tc.rng_seed);
    let weight = 1.0 / tc.batch_size as f64;
    let mut report = TrainReport {
        step_losses: Vec::with_capacity(tc.epochs * tc.steps_per_epoch),
        epoch_losses: Vec::with_capacity(tc.epochs),
    };
    for epoch in 0..tc.epochs {
        let lr = tc.learning_rate_at(epoch);
        let mut epoch_loss = 0.0;
        for _ in 0..tc.steps_per_epoch {
            let mut grads = CodecGradients::zeros_like(codecs);
            let mut batch_loss = 0.0;
            {
                let sys = LinkSystem {
                    codecs,
                    scene,
                    dmce,
                    y_denoiser,
                };
                for _ in 0..tc.batch_size {
                    let snr = rng.random_range(cfg.snr_db_min..=cfg.snr_db_max);
                    let seed = rng.next_u64();
                    let sample = simulate_symbols(&sys, &link.at_snr_db(snr), cfg.mode, seed)?;
                    let trace = codecs.decode_traced(&sample.x_hat)?;
                    let (loss, _) = codecs.decoder_backward(&trace, &sample.scene.truth, weight, &mut grads)?;
                    batch_loss += loss;
                }
            }
            batch_loss *= weight;
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            codecs.apply_decoders(&grads, lr)?;
            if !codecs.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            report.step_losses.push(batch_loss);
            epoch_loss += batch_loss;
        }
        report.epoch_losses.push(epoch_loss / tc.steps_per_epoch as f64);
    }
    Ok(report)
}

/// Clean channel draws for noise-predictor training.
pub fn channel_sampler(link: &LinkConfig) -> impl FnMut(&mut SimRng) -> ComplexMatrix<f64> + '_ {
    move |rng: &mut SimRng| build_channel(link, rng).h
}

/// Trains a denoiser on single noiseless received columns `H x_k` produced
/// by the (trained) encoders.
pub fn train_y_denoiser(
    codecs: &Codecs,
    scene: &SceneConfig,
    link: &LinkConfig,
    schedule: &NoiseSchedule<f64>,
    arch: &PredictorArch,
    cfg: &TrainConfig,
) -> Result<(NoisePredictor<f64>, TrainReport)> {
    let mut failure = None;
    let mut sampler = |rng: &mut SimRng| {
        let s = generate_scene(rng, scene);
        let x = match codecs.encode(&s.modalities, link.power) {
            Ok(x) => x,
            Err(e) => {
                failure.get_or_insert(e);
                return ComplexMatrix::zeros(link.rx_antennas, 1);
            }
        };
        let h = build_channel(link, rng).h;
        let col = rng.random_range(0..x.cols());
        let xc = ComplexMatrix::from_fn(x.rows(), 1, |i, _| x[(i, col)]);
        h.matmul(&xc).unwrap_or_else(|_| ComplexMatrix::zeros(link.rx_antennas, 1))
    };
    let out = train_noise_predictor(&mut sampler, schedule, arch, cfg);
    match failure {
        Some(e) => Err(e),
        None => out,
    }
}
