use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimensionMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("singular matrix: pivot {index} below tolerance")]
    Singular { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cannot power-normalize a zero-norm symbol block")]
    ZeroNorm,

    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Diverged { epoch: usize },

    #[error("backward called without a forward cache")]
    MissingCache,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("csi file: {0}")]
    CsiFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::DimensionMismatch { op, lhs, rhs }
    }

    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. } | Error::ZeroNorm | Error::Diverged { .. }
        )
    }
}
