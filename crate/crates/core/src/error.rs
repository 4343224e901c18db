use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("correlation undefined: a series has zero variance")]
    UndefinedCorrelation,

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("attribution map sums to zero")]
    AllZeroAttribution,

    #[error("class index {index} out of range for {num_classes} classes")]
    InvalidClass { index: usize, num_classes: usize },

    #[error("layer {0} is not a convolution")]
    LayerNotConv(usize),

    #[error("layer {index} ({kind}) is not supported by {method}")]
    UnsupportedLayer {
        index: usize,
        kind: String,
        method: &'static str,
    },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("surrogate fit is singular")]
    SingularFit,

    #[error("prediction {0:e} too small for a ratio")]
    ZeroPrediction(f64),

    #[error("input has zero norm")]
    ZeroNorm,

    #[error("reference mask is empty")]
    EmptyMask,

    #[error("explanation complexity {0:e} too small for a relative change")]
    ZeroComplexity(f64),

    #[error("every neighbourhood sample was degenerate")]
    DegenerateNeighborhood,

    #[error("perturbation calibration failed after {attempts} attempts (last std {last_std:e})")]
    CalibrationFailed { attempts: usize, last_std: f64 },

    #[error("corrupt model file{}: {reason}", .layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    CorruptModel { layer: Option<usize>, reason: String },

    #[error("corrupt manifest {path}: {reason}")]
    CorruptManifest { path: PathBuf, reason: String },

    #[error("checksum mismatch for {path}")]
    ChecksumMismatch { path: PathBuf },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("too many samples skipped in {family}: {skipped} of {total}")]
    CoverageTooLow { family: String, skipped: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable code used in result files.
    pub fn status_code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::UndefinedCorrelation => "undefined_correlation",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::AllZeroAttribution => "all_zero_attribution",
            Error::InvalidClass { .. } => "invalid_class",
            Error::LayerNotConv(_) => "layer_not_conv",
            Error::UnsupportedLayer { .. } => "unsupported_layer",
            Error::Divergence { .. } => "divergence",
            Error::SingularFit => "singular_fit",
            Error::ZeroPrediction(_) => "zero_prediction",
            Error::ZeroNorm => "zero_norm",
            Error::EmptyMask => "empty_mask",
            Error::ZeroComplexity(_) => "zero_complexity",
            Error::DegenerateNeighborhood => "degenerate_neighborhood",
            Error::CalibrationFailed { .. } => "calibration_failed",
            Error::CorruptModel { .. } => "corrupt_model",
            Error::CorruptManifest { .. } => "corrupt_manifest",
            Error::ChecksumMismatch { .. } => "checksum_mismatch",
            Error::MissingInput(_) => "missing_input",
            Error::Precondition(_) => "precondition",
            Error::CoverageTooLow { .. } => "coverage_too_low",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
