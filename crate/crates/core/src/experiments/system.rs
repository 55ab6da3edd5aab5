//! Three-stage training of the full system and its on-disk artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::experiments::config::{seed_tags, ExperimentConfig};
use crate::neuralnet::checkpoint::{load_bundle, load_predictor, save_bundle, save_predictor};
use crate::neuralnet::{train_noise_predictor, NoisePredictor, TrainReport};
use crate::random::{rng_from_seed, substream};
use crate::semantic::{channel_sampler, train_stage1, train_stage3, train_y_denoiser, Codecs, Enhancer};

pub const STAGE1_FILE: &str = "stage1_codecs.ckpt";
pub const STAGE2_FILE: &str = "stage2_dmce.ckpt";
pub const STAGE3_FILE: &str = "stage3_codecs.ckpt";
pub const Y_DENOISER_FILE: &str = "y_denoiser.ckpt";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone)]
pub struct TrainedSystem {
    pub stage1_codecs: Codecs,
    /// Stage-1 codecs with fine-tuned decoders.
    pub codecs: Codecs,
    pub dmce: Enhancer,
    pub y_denoiser: Option<Enhancer>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageReports {
    pub stage1: Option<TrainReport>,
    pub stage2: Option<TrainReport>,
    pub stage3: Option<TrainReport>,
    pub y_denoiser: Option<TrainReport>,
}

fn enhancer(predictor: NoisePredictor<f64>, schedule: &NoiseSchedule<f64>, cfg: &ExperimentConfig) -> Enhancer {
    Enhancer {
        predictor,
        schedule: schedule.clone(),
        sampler: cfg.schedule.sampler,
    }
}

/// Stage 1 (codecs, ideal channel), stage 2 (channel enhancer), optional
/// received-signal denoiser, stage 3 (decoder fine-tuning).
pub fn train_system(cfg: &ExperimentConfig) -> Result<(TrainedSystem, StageReports)> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let schedule = cfg.schedule.build()?;
    let mut reports = StageReports::default();

    let mut init_rng = rng_from_seed(substream(cfg.seed, seed_tags::CODEC_INIT));
    let mut codecs = Codecs::new(cfg.codec, &mut init_rng)?;
    reports.stage1 = Some(train_stage1(&mut codecs, &cfg.scene, cfg.link.power, &cfg.stage1)?);
    let stage1_codecs = codecs.clone();

    let mut sampler = channel_sampler(&cfg.link);
    let (predictor, r2) = train_noise_predictor(&mut sampler, &schedule, &cfg.stage2.arch, &cfg.stage2.train)?;
    reports.stage2 = Some(r2);
    let dmce = enhancer(predictor, &schedule, &cfg);

    let y_denoiser = if cfg.needs_y_denoiser() {
        let (p, r) = train_y_denoiser(
            &codecs,
            &cfg.scene,
            &cfg.link,
            &schedule,
            &cfg.y_denoiser.arch,
            &cfg.y_denoiser.train,
        )?;
        reports.y_denoiser = Some(r);
        Some(enhancer(p, &schedule, &cfg))
    } else {
        None
    };

    reports.stage3 = Some(train_stage3(
        &mut codecs,
        &cfg.scene,
        Some(&dmce),
        y_denoiser.as_ref(),
        &cfg.link,
        &cfg.stage3,
    )?);

    Ok((
        TrainedSystem {
            stage1_codecs,
            codecs,
            dmce,
            y_denoiser,
        },
        reports,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stage: String,
    pub file: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub dmce_signal_power: f64,
    pub final_loss: Vec<(String, f64)>,
    pub checkpoints: Vec<ManifestEntry>,
    /// Fully resolved configuration, stage seeds included.
    pub config: ExperimentConfig,
}

fn tail_loss(r: &Option<TrainReport>) -> f64 {
    r.as_ref()
        .and_then(|r| r.epoch_losses.last().copied())
        .unwrap_or(f64::NAN)
}

pub fn save_system(dir: &Path, cfg: &ExperimentConfig, sys: &TrainedSystem, reports: &StageReports) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut record = |stage: &str, file: &str| -> Result<()> {
        let bytes = std::fs::metadata(dir.join(file))?.len();
        files.push(ManifestEntry {
            stage: stage.into(),
            file: file.into(),
            bytes,
        });
        Ok(())
    };

    let s1 = sys.stage1_codecs.sections();
    save_bundle(&dir.join(STAGE1_FILE), &s1.iter().map(|(n, m)| (n.as_str(), *m)).collect::<Vec<_>>())?;
    record("stage1", STAGE1_FILE)?;
    save_predictor(&dir.join(STAGE2_FILE), &sys.dmce.predictor)?;
    record("stage2", STAGE2_FILE)?;
    let s3 = sys.codecs.sections();
    save_bundle(&dir.join(STAGE3_FILE), &s3.iter().map(|(n, m)| (n.as_str(), *m)).collect::<Vec<_>>())?;
    record("stage3", STAGE3_FILE)?;
    if let Some(y) = &sys.y_denoiser {
        save_predictor(&dir.join(Y_DENOISER_FILE), &y.predictor)?;
        record("y_denoiser", Y_DENOISER_FILE)?;
    }

    let manifest = Manifest {
        format: "dmce-run-1".into(),
        dmce_signal_power: sys.dmce.predictor.signal_power(),
        final_loss: vec![
            ("stage1".into(), tail_loss(&reports.stage1)),
            ("stage2".into(), tail_loss(&reports.stage2)),
            ("stage3".into(), tail_loss(&reports.stage3)),
        ],
        checkpoints: files,
        config: cfg.resolved(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    std::fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

/// Loads checkpoints written by [`save_system`], checking them against `cfg`.
pub fn load_system(dir: &Path, cfg: &ExperimentConfig) -> Result<TrainedSystem> {
    let schedule = cfg.schedule.build()?;
    let codecs_at = |file: &str| -> Result<Codecs> {
        let path = dir.join(file);
        let sections = load_bundle::<f64>(&path)?;
        Codecs::from_sections(cfg.codec, sections).map_err(|e| match e {
            Error::InvalidParameter(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    };
    let stage1_codecs = codecs_at(STAGE1_FILE)?;
    let codecs = codecs_at(STAGE3_FILE)?;

    let want = 2 * cfg.link.rx_antennas * cfg.link.users;
    let predictor = load_predictor::<f64>(&dir.join(STAGE2_FILE))?;
    if predictor.data_dim() != want {
        return Err(Error::dims(
            "stage2 checkpoint",
            (cfg.link.rx_antennas, cfg.link.users),
            (predictor.data_dim() / 2, 1),
        ));
    }
    let dmce = enhancer(predictor, &schedule, cfg);

    let y_path: PathBuf = dir.join(Y_DENOISER_FILE);
    let y_denoiser = if cfg.needs_y_denoiser() {
        let p = load_predictor::<f64>(&y_path)?;
        if p.data_dim() != 2 * cfg.link.rx_antennas {
            return Err(Error::dims("y_denoiser checkpoint", (cfg.link.rx_antennas, 1), (p.data_dim() / 2, 1)));
        }
        Some(enhancer(p, &schedule, cfg))
    } else {
        None
    };
    Ok(TrainedSystem {
        stage1_codecs,
        codecs,
        dmce,
        y_denoiser,
    })
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<(Manifest, StageReports)> {
    let (sys, reports) = train_system(cfg)?;
    let manifest = save_system(out, cfg, &sys, &reports)?;
    Ok((manifest, reports))
}
