//! Small trainable networks with hand-written backward passes.

pub mod checkpoint;
mod embedding;
mod mlp;
mod predictor;

pub use embedding::sinusoidal_time_embedding;
pub use mlp::{BatchCache, Dense, ForwardCache, Gradients, Mlp, LEAKY_SLOPE};
pub use predictor::{
    normalized_vector, train_noise_predictor, ChannelSampler, DenoisingExample, NoisePredictor, PredictorArch, TrainConfig,
    TrainReport, POWER_CALIBRATION_DRAWS,
};
