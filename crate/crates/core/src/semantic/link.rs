//! One end-to-end realization of the multi-user semantic link.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{build_channel, estimate_csi, transmit, CsiEstimate, LinkConfig};
use crate::diffusion::{denoise, enhance_csi, real_to_complex, NoiseSchedule, Sampler};
use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::metrics::{miou, nmse_db};
use crate::neuralnet::{normalized_vector, NoisePredictor};
use crate::random::{rng_from_seed, substream, SimRng};
use crate::semantic::codec::Codecs;
use crate::semantic::scene::{generate_scene, Scene, SceneConfig, SegmentationMap};

type CMat = ComplexMatrix<f64>;

/// Random substreams of one trial. Every mode draws the scene, channel and
/// noises from the same streams, so modes are paired for a given seed.
pub mod streams {
    pub const SCENE: u64 = 1;
    pub const CHANNEL: u64 = 2;
    pub const PILOT: u64 = 3;
    pub const DATA_NOISE: u64 = 4;
    pub const DENOISER: u64 = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMode {
    /// Equalize with the diffusion-enhanced estimate `H̃`.
    Dmce,
    /// Equalize with the raw pilot estimate `Ĥ`.
    NoDmce,
    /// Equalize with the true channel.
    PerfectCsi,
    /// Denoise the received columns of `Y`, then equalize with `Ĥ`.
    YOriented,
}

impl LinkMode {
    pub const ALL: [LinkMode; 4] = [LinkMode::Dmce, LinkMode::NoDmce, LinkMode::PerfectCsi, LinkMode::YOriented];

    pub fn name(self) -> &'static str {
        match self {
            LinkMode::Dmce => "dmce",
            LinkMode::NoDmce => "no_dmce",
            LinkMode::PerfectCsi => "perfect_csi",
            LinkMode::YOriented => "y_oriented",
        }
    }
}

impl fmt::Display for LinkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LinkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LinkMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

/// A trained noise predictor together with the schedule and sampler it runs with.
#[derive(Debug, Clone)]
pub struct Enhancer {
    pub predictor: NoisePredictor<f64>,
    pub schedule: NoiseSchedule<f64>,
    pub sampler: Sampler,
}

impl Enhancer {
    pub fn enhance(&self, est: &CsiEstimate, rng: &mut SimRng) -> Result<CMat> {
        enhance_csi(&self.predictor, est, &self.schedule, self.sampler, rng)
    }

    /// Denoises every column of `y` independently; the predictor must have been
    /// trained on noiseless columns of `H X`.
    pub fn denoise_columns(&self, y: &CMat, noise_variance: f64, rng: &mut SimRng) -> Result<CMat> {
        let (m, k) = y.shape();
        if self.predictor.data_dim() != 2 * m {
            return Err(Error::dims("denoise_columns", (self.predictor.data_dim() / 2, 1), (m, 1)));
        }
        let power = self.predictor.signal_power();
        let ratio = noise_variance / power;
        let unscale = (power / 2.0).sqrt();
        let mut out = CMat::zeros(m, k);
        for c in 0..k {
            let col = CMat::from_fn(m, 1, |r, _| y[(r, c)]);
            let noisy: Vec<f64> = normalized_vector(&col, power);
            let (clean, _) = denoise(&self.predictor, &noisy, ratio, &self.schedule, self.sampler, rng)?;
            let flat: Vec<f64> = clean.iter().map(|v| v * unscale).collect();
            let den = real_to_complex(&flat, m, 1)?;
            for r in 0..m {
                out[(r, c)] = den[(r, 0)];
            }
        }
        Ok(out)
    }
}

/// Everything a link realization needs besides the channel configuration.
#[derive(Debug, Clone, Copy)]
pub struct LinkSystem<'a> {
    pub codecs: &'a Codecs,
    pub scene: &'a SceneConfig,
    pub dmce: Option<&'a Enhancer>,
    pub y_denoiser: Option<&'a Enhancer>,
}

/// Transmit-to-equalizer part of one realization.
#[derive(Debug, Clone)]
pub struct LinkSample {
    pub scene: Scene,
    pub x: CMat,
    pub x_hat: CMat,
    pub h: CMat,
    pub h_hat: CMat,
    /// Channel the equalizer used.
    pub h_used: CMat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkOutcome {
    pub predicted: SegmentationMap,
    pub truth: SegmentationMap,
    pub miou: f64,
    pub nmse_initial_db: f64,
    /// NMSE of the channel the equalizer used; `None` with perfect CSI.
    pub nmse_used_db: Option<f64>,
    /// Mean over entries of `|X̂ − X|²`.
    pub symbol_mse: f64,
}

/// Scene → encode → transmit → estimate → (enhance) → zero-forcing.
pub fn simulate_symbols(sys: &LinkSystem, link: &LinkConfig, mode: LinkMode, seed: u64) -> Result<LinkSample> {
    link.validate()?;
    if link.users != sys.codecs.dims.users || link.block_length != sys.codecs.dims.symbols {
        return Err(Error::dims(
            "link vs codecs",
            (link.users, link.block_length),
            (sys.codecs.dims.users, sys.codecs.dims.symbols),
        ));
    }
    let mut scene_rng = rng_from_seed(substream(seed, streams::SCENE));
    let mut channel_rng = rng_from_seed(substream(seed, streams::CHANNEL));
    let mut pilot_rng = rng_from_seed(substream(seed, streams::PILOT));
    let mut noise_rng = rng_from_seed(substream(seed, streams::DATA_NOISE));
    let mut denoise_rng = rng_from_seed(substream(seed, streams::DENOISER));

    let scene = generate_scene(&mut scene_rng, sys.scene);
    let x = sys.codecs.encode(&scene.modalities, link.power)?;
    let channel = build_channel(link, &mut channel_rng);
    let y = transmit(&channel.h, &x, link.data_noise_variance, &mut noise_rng)?;
    let est = estimate_csi(&channel, link.pilot_noise_variance(), &mut pilot_rng)?;

    let missing = |what: &str| Error::InvalidParameter(format!("mode {mode} needs a trained {what}"));
    let (h_used, y_used) = match mode {
        LinkMode::PerfectCsi => (channel.h.clone(), y),
        LinkMode::NoDmce => (est.h_hat.clone(), y),
        LinkMode::Dmce => {
            let enhancer = sys.dmce.ok_or_else(|| missing("channel enhancer"))?;
            (enhancer.enhance(&est, &mut denoise_rng)?, y)
        }
        LinkMode::YOriented => {
            let denoiser = sys.y_denoiser.ok_or_else(|| missing("received-signal denoiser"))?;
            let y_clean = denoiser.denoise_columns(&y, link.data_noise_variance, &mut denoise_rng)?;
            (est.h_hat.clone(), y_clean)
        }
    };
    let x_hat = h_used.solve_least_squares(&y_used)?;
    if !x_hat.is_finite() {
        return Err(Error::Singular { index: 0 });
    }
    Ok(LinkSample {
        scene,
        x,
        x_hat,
        h: channel.h,
        h_hat: est.h_hat,
        h_used,
    })
}

pub fn run_link(sys: &LinkSystem, link: &LinkConfig, mode: LinkMode, seed: u64) -> Result<LinkOutcome> {
    let s = simulate_symbols(sys, link, mode, seed)?;
    let predicted = sys.codecs.decode(&s.x_hat)?.argmax();
    let err = s.x_hat.sub(&s.x)?.frobenius_norm_sq();
    Ok(LinkOutcome {
        miou: miou(&predicted, &s.scene.truth)?,
        nmse_initial_db: nmse_db(&s.h_hat, &s.h)?,
        nmse_used_db: match mode {
            LinkMode::PerfectCsi => None,
            _ => Some(nmse_db(&s.h_used, &s.h)?),
        },
        symbol_mse: err / (s.x.rows() * s.x.cols()) as f64,
        predicted,
        truth: s.scene.truth,
    })
}
