//! Toy multi-source segmentation task carried over the MIMO link.

pub mod codec;
pub mod link;
pub mod scene;
pub mod training;

pub use codec::{
    cross_entropy, jscc_decode, jscc_encode, power_normalize, semantic_decode, semantic_encode, CodecDims, Codecs,
    FeatureVector, ProbabilityMap, SymbolBlock,
};
pub use link::{run_link, simulate_symbols, Enhancer, LinkMode, LinkOutcome, LinkSample, LinkSystem};
pub use scene::{generate_scene, Scene, SceneConfig, SegmentationMap};
pub use training::{channel_sampler, train_stage1, train_stage3, train_y_denoiser, Stage3Config};
