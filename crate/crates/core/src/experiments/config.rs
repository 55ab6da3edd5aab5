use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::LinkConfig;
use crate::diffusion::{NoiseSchedule, Sampler};
use crate::error::{Error, Result};
use crate::neuralnet::{PredictorArch, TrainConfig};
use crate::random::substream;
use crate::semantic::{CodecDims, LinkMode, SceneConfig, Stage3Config};

/// Substream tags deriving every stage seed from the master seed.
pub mod seed_tags {
    pub const CODEC_INIT: u64 = 100;
    pub const STAGE1: u64 = 101;
    pub const STAGE2: u64 = 102;
    pub const STAGE3: u64 = 103;
    pub const Y_DENOISER: u64 = 104;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sampler: Sampler,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sampler: Sampler::Deterministic,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule<f64>> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub train: TrainConfig,
    pub arch: PredictorArch,
}

impl Default for DenoiserConfig {
    /// The learning-rate schedule decays to nothing within 100 epochs, so the
    /// epochs are long: small-`t` noise prediction needs ~10⁵ steps to settle.
    fn default() -> Self {
        Self {
            train: TrainConfig {
                steps_per_epoch: 1000,
                ..TrainConfig::default()
            },
            arch: PredictorArch::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub modes: Vec<LinkMode>,
    /// Reuse one realization per (SNR, trial) across all modes.
    pub paired_modes: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            snr_db: (0..9).map(|i| -4.0 + 2.0 * i as f64).collect(),
            trials: 200,
            modes: vec![LinkMode::Dmce, LinkMode::NoDmce, LinkMode::PerfectCsi],
            paired_modes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub link: LinkConfig,
    pub scene: SceneConfig,
    pub codec: CodecDims,
    pub schedule: ScheduleConfig,
    pub stage1: TrainConfig,
    pub stage2: DenoiserConfig,
    pub stage3: Stage3Config,
    pub y_denoiser: DenoiserConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            output_dir: PathBuf::from("runs/default"),
            link: LinkConfig::default(),
            scene: SceneConfig::default(),
            codec: CodecDims::default(),
            schedule: ScheduleConfig::default(),
            stage1: TrainConfig {
                learning_rate: 0.5,
                decay: 0.95,
                epochs: 10,
                batch_size: 32,
                steps_per_epoch: 200,
                rng_seed: 0,
            },
            stage2: DenoiserConfig::default(),
            stage3: Stage3Config::default(),
            y_denoiser: DenoiserConfig {
                train: TrainConfig {
                    epochs: 30,
                    ..TrainConfig::default()
                },
                arch: PredictorArch::default(),
            },
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text; syntax and type errors report line and column.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|s| {
                    let (line, col) = line_col(text, s.start);
                    format!("line {line}, column {col}: ")
                })
                .unwrap_or_default();
            Error::Config(format!("{at}{}", e.message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed must be <= {}", i64::MAX)));
        }
        let wrap = |r: Result<()>, section: &str| {
            r.map_err(|e| match e {
                Error::InvalidParameter(m) | Error::Config(m) => Error::Config(format!("[{section}] {m}")),
                other => other,
            })
        };
        wrap(self.link.validate(), "link")?;
        wrap(self.scene.validate(), "scene")?;
        wrap(self.codec.validate(), "codec")?;
        wrap(self.schedule.build().map(|_| ()), "schedule")?;
        wrap(self.stage1.validate(), "stage1")?;
        wrap(self.stage2.train.validate(), "stage2.train")?;
        wrap(self.stage3.train.validate(), "stage3.train")?;
        wrap(self.y_denoiser.train.validate(), "y_denoiser.train")?;

        let c = &self.codec;
        let mismatch = |what: String| Err(Error::Config(what));
        if self.link.users != c.users || self.scene.modalities() != c.users {
            return mismatch(format!(
                "link.users = {}, scene modalities = {}, codec.users = {} must agree",
                self.link.users,
                self.scene.modalities(),
                c.users
            ));
        }
        if self.link.block_length != c.symbols {
            return mismatch(format!(
                "link.block_length = {} must equal codec.symbols = {}",
                self.link.block_length, c.symbols
            ));
        }
        if self.scene.grid != c.grid || self.scene.classes != c.classes {
            return mismatch("scene.grid/classes must equal codec.grid/classes".into());
        }
        if !(self.stage3.snr_db_min <= self.stage3.snr_db_max) {
            return mismatch("[stage3] snr_db_min must be <= snr_db_max".into());
        }
        let s = &self.sweep;
        if s.snr_db.is_empty() || s.snr_db.iter().any(|v| !v.is_finite()) {
            return mismatch("[sweep] snr_db must be a nonempty list of finite values".into());
        }
        if s.trials == 0 {
            return mismatch("[sweep] trials must be >= 1".into());
        }
        if s.modes.is_empty() {
            return mismatch("[sweep] modes must be nonempty".into());
        }
        let mut seen = s.modes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != s.modes.len() {
            return mismatch("[sweep] modes must not repeat".into());
        }
        Ok(())
    }

    /// Copy with every stage seed derived from `seed`. Derived seeds keep 63
    /// bits so they stay representable as TOML integers.
    pub fn resolved(&self) -> Self {
        let derive = |tag| substream(self.seed, tag) >> 1;
        let mut c = self.clone();
        c.stage1.rng_seed = derive(seed_tags::STAGE1);
        c.stage2.train.rng_seed = derive(seed_tags::STAGE2);
        c.stage3.train.rng_seed = derive(seed_tags::STAGE3);
        c.y_denoiser.train.rng_seed = derive(seed_tags::Y_DENOISER);
        c.link.rng_seed = self.seed;
        c
    }

    pub fn needs_y_denoiser(&self) -> bool {
        self.sweep.modes.contains(&LinkMode::YOriented)
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}
