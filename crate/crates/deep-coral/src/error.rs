//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by matrix ops, the network, the trainer, and the
/// experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    /// A batch had fewer than two rows, so the unbiased covariance
    /// denominator `n - 1` would be zero or negative.
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Matrix or batch shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Invalid network architecture (empty dims, zero-width layer, ...).
    #[error("bad architecture: {0}")]
    BadArchitecture(String),

    /// A class label fell outside `[0, num_classes)`.
    #[error("bad label: {0}")]
    BadLabel(String),

    /// A backward pass was handed activations that do not match the
    /// network, or gradients that do not match those activations.
    #[error("stale forward pass: {0}")]
    StaleForward(String),

    /// Paired slices (losses and weights, for example) differ in length.
    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    /// The lambda-calibration probe produced non-finite losses.
    #[error("calibration probe diverged: {0}")]
    ProbeDiverged(String),

    /// Invalid synthetic-shift specification.
    #[error("bad shift spec: {0}")]
    BadSpec(String),

    /// A CSV or config line failed to parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A CSV label column held a value outside `[0, num_classes)`.
    #[error("label out of range at line {line}: {label} (num_classes = {num_classes})")]
    LabelOutOfRange {
        line: usize,
        label: i64,
        num_classes: usize,
    },

    /// Requested batch size exceeds the dataset size.
    #[error("batch size {batch} larger than dataset size {len}")]
    BatchTooLarge { batch: usize, len: usize },

    /// Requested batch size is below the minimum of two rows.
    #[error("batch size {batch} below minimum of 2")]
    BatchTooSmall { batch: usize },

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Training produced non-finite losses and was aborted.
    #[error("numerical divergence: {0}")]
    Divergence(String),

    /// Filesystem failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable process exit code for this error kind:
    /// 1 config error, 2 IO error, 3 numerical divergence.
    /// (0 is success and 4 is reserved for gradient-check failures.)
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io(_) => 2,
            Error::NonFinite(_) | Error::Divergence(_) | Error::ProbeDiverged(_) => 3,
            _ => 1,
        }
    }
}
