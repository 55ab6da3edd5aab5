//! Link-level simulator for multi-user MIMO semantic communication with a
//! diffusion-model channel enhancer.
//!
//! The numeric core ([`linalg`], [`diffusion`], [`neuralnet`]) is generic over
//! `f32`/`f64`; channel, link and experiment code runs in `f64`.

pub mod channel;
pub mod diffusion;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod metrics;
pub mod neuralnet;
pub mod random;
pub mod scalar;
pub mod semantic;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ComplexMatrixF64 = linalg::ComplexMatrix<f64>;
pub type ComplexMatrixF32 = linalg::ComplexMatrix<f32>;
pub type MlpF64 = neuralnet::Mlp<f64>;
pub type MlpF32 = neuralnet::Mlp<f32>;
pub type NoiseScheduleF64 = diffusion::NoiseSchedule<f64>;
pub type NoiseScheduleF32 = diffusion::NoiseSchedule<f32>;
pub type NoisePredictorF64 = neuralnet::NoisePredictor<f64>;
pub type NoisePredictorF32 = neuralnet::NoisePredictor<f32>;
