//! Diffusion schedule, forward noising, reverse sampling and the CSI enhancer.

mod enhance;
mod schedule;

pub use enhance::{complex_to_real, denoise, enhance_csi, real_to_complex, EpsilonModel, Sampler};
pub use schedule::NoiseSchedule;
