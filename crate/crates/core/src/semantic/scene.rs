//! Synthetic multi-source scenes: a block-aligned label map and one noisy
//! rendering of it per user.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    height: usize,
    width: usize,
    classes: usize,
    labels: Vec<u8>,
}

impl SegmentationMap {
    pub fn new(height: usize, width: usize, classes: usize, labels: Vec<u8>) -> Result<Self> {
        if classes < 2 || classes > 256 {
            return Err(Error::InvalidParameter(format!("class count {classes} outside [2, 256]")));
        }
        if labels.len() != height * width {
            return Err(Error::dims("segmentation map", (height, width), (labels.len(), 1)));
        }
        if labels.iter().any(|&l| l as usize >= classes) {
            return Err(Error::InvalidParameter("label outside class range".into()));
        }
        Ok(Self {
            height,
            width,
            classes,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, classes: usize, label: u8) -> Result<Self> {
        Self::new(height, width, classes, vec![label; height * width])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn cells(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn class_fraction(&self, class: u8) -> f64 {
        self.labels.iter().filter(|&&l| l == class).count() as f64 / self.cells() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Side length of the square label grid.
    pub grid: usize,
    pub classes: usize,
    /// Rectangles snap to a lattice of `block × block` cells.
    pub block: usize,
    pub min_rects: usize,
    pub max_rects: usize,
    /// Rectangle side length range, in blocks.
    pub min_side: usize,
    pub max_side: usize,
    pub pixel_noise_std: f64,
    /// One class → intensity table per modality (user).
    pub intensity: Vec<Vec<f64>>,
    /// Modalities that hide one randomly chosen rectangle.
    pub occlude: Vec<bool>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            grid: 16,
            classes: 4,
            block: 4,
            min_rects: 1,
            max_rects: 3,
            min_side: 1,
            max_side: 2,
            pixel_noise_std: 0.2,
            intensity: vec![vec![0.0, 1.0, 0.5, -0.5], vec![0.0, 0.5, 1.0, -1.0]],
            occlude: vec![false, true],
        }
    }
}

impl SceneConfig {
    pub fn modalities(&self) -> usize {
        self.intensity.len()
    }

    pub fn cells(&self) -> usize {
        self.grid * self.grid
    }

    pub fn lattice(&self) -> usize {
        self.grid / self.block
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(format!("scene: {m}")));
        if self.classes < 2 || self.classes > 256 {
            return bad(format!("classes must be in [2, 256], got {}", self.classes));
        }
        if self.block == 0 || self.grid == 0 || self.grid % self.block != 0 {
            return bad("grid must be a positive multiple of block".into());
        }
        if self.min_rects > self.max_rects {
            return bad("min_rects > max_rects".into());
        }
        if self.min_side == 0 || self.min_side > self.max_side || self.max_side > self.lattice() {
            return bad("rectangle sides must satisfy 1 <= min_side <= max_side <= grid/block".into());
        }
        if self.intensity.is_empty() || self.intensity.iter().any(|t| t.len() != self.classes) {
            return bad("need one intensity table of length `classes` per modality".into());
        }
        if self.occlude.len() != self.intensity.len() {
            return bad("occlude needs one flag per modality".into());
        }
        if !(self.pixel_noise_std >= 0.0) {
            return bad("pixel_noise_std must be >= 0".into());
        }
        Ok(())
    }
}

/// Axis-aligned rectangle in cell units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub class: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub truth: SegmentationMap,
    /// Row-major renderings, one per modality.
    pub modalities: Vec<Vec<f64>>,
    pub rects: Vec<Rect>,
}

/// Paints random block-aligned rectangles of non-background classes over
/// class 0, then renders every modality with its own intensity table and
/// Gaussian pixel noise. Occluding modalities render one rectangle as background.
pub fn generate_scene<R: Rng + ?Sized>(rng: &mut R, cfg: &SceneConfig) -> Scene {
    let g = cfg.grid;
    let lattice = cfg.lattice();
    let count = rng.random_range(cfg.min_rects..=cfg.max_rects);
    let mut labels = vec![0u8; g * g];
    let mut rects = Vec::with_capacity(count);
    for _ in 0..count {
        let w = rng.random_range(cfg.min_side..=cfg.max_side);
        let h = rng.random_range(cfg.min_side..=cfg.max_side);
        let bx = rng.random_range(0..=lattice - w);
        let by = rng.random_range(0..=lattice - h);
        let class = rng.random_range(1..cfg.classes) as u8;
        let r = Rect {
            x: bx * cfg.block,
            y: by * cfg.block,
            w: w * cfg.block,
            h: h * cfg.block,
            class,
        };
        paint(&mut labels, g, &r, class);
        rects.push(r);
    }

    let modalities = cfg
        .intensity
        .iter()
        .zip(&cfg.occlude)
        .map(|(table, &occlude)| {
            let mut seen = labels.clone();
            if occlude && !rects.is_empty() {
                let hidden = rects[rng.random_range(0..rects.len())];
                // Repaint the other rectangles on top so only the hidden one disappears.
                paint(&mut seen, g, &hidden, 0);
                for r in rects.iter().filter(|r| **r != hidden) {
                    paint_visible(&mut seen, &labels, g, r);
                }
            }
            seen.iter()
                .map(|&l| table[l as usize] + cfg.pixel_noise_std * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    Scene {
        truth: SegmentationMap {
            height: g,
            width: g,
            classes: cfg.classes,
            labels,
        },
        modalities,
        rects,
    }
}

fn paint(labels: &mut [u8], grid: usize, r: &Rect, class: u8) {
    for y in r.y..r.y + r.h {
        labels[y * grid + r.x..y * grid + r.x + r.w].fill(class);
    }
}

/// Restores the true labels of `r` where it is not covered by a later rectangle.
fn paint_visible(seen: &mut [u8], truth: &[u8], grid: usize, r: &Rect) {
    for y in r.y..r.y + r.h {
        for x in r.x..r.x + r.w {
            let k = y * grid + x;
            if truth[k] == r.class {
                seen[k] = truth[k];
            }
        }
    }
}
