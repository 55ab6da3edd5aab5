use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::config::ExperimentConfig;
use crate::experiments::csi_file::{load_csi, save_csi};
use crate::linalg::ComplexMatrix;
use crate::neuralnet::checkpoint::load_predictor;
use crate::random::rng_from_seed;
use crate::semantic::Enhancer;
use crate::channel::CsiEstimate;

/// Enhances the CSI in `input` with the predictor checkpoint and writes `H̃`
/// to `output`, keeping the input's noise variance in the header.
pub fn cmd_enhance(cfg: &ExperimentConfig, checkpoint: &Path, input: &Path, output: &Path) -> Result<ComplexMatrix<f64>> {
    let predictor = load_predictor::<f64>(checkpoint)?;
    let (h_hat, noise_variance) = load_csi(input)?;
    if 2 * h_hat.rows() * h_hat.cols() != predictor.data_dim() {
        return Err(Error::DimensionMismatch {
            op: "enhance: csi file vs checkpoint",
            lhs: h_hat.shape(),
            rhs: (predictor.data_dim() / 2, 1),
        });
    }
    let enhancer = Enhancer {
        predictor,
        schedule: cfg.schedule.build()?,
        sampler: cfg.schedule.sampler,
    };
    let est = CsiEstimate { h_hat, noise_variance };
    let h_tilde = enhancer.enhance(&est, &mut rng_from_seed(cfg.seed))?;
    save_csi(output, &h_tilde, noise_variance)?;
    Ok(h_tilde)
}
