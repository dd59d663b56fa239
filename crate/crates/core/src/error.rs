use crate::linalg::LinalgError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("dimension mismatch at {context}: expected {expected}, found {found}")]
    DimensionMismatch { context: String, expected: usize, found: usize },
    #[error("no value supplied at the limit label")]
    MissingLimitValue,
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error("frame vectors are linearly dependent at label {label}")]
    RankDeficient { label: String },
    #[error("frame is not orthonormal at label {label} (Gram residual {residual:e})")]
    FrameNotOrthonormal { label: String, residual: f64 },
    #[error("variational certificate failed: direction {direction}, eps {eps:e}, decrease {decrease:e}, identity residual {identity_residual:e}")]
    CertificateFailed { direction: usize, eps: f64, decrease: f64, identity_residual: f64 },
    #[error("no recovery sections supplied")]
    MissingRecovery,
    #[error("operator at label {label} is not invertible (smallest eigenvalue {min_eigenvalue:e})")]
    NotInvertible { label: String, min_eigenvalue: f64 },
    #[error("form is not nonnegative: smallest eigenvalue {min_eigenvalue:e}")]
    NotNonnegative { min_eigenvalue: f64 },
    #[error("operator is not self-adjoint in the mass inner product (residual {residual:e})")]
    NotSelfAdjoint { residual: f64 },
    #[error("invalid base sequence: {0}")]
    InvalidBase(String),
    #[error("metric degenerates: |eps * t| = {0} exceeds 1/2")]
    DegenerateMetric(f64),
    #[error("grid too coarse: the finest measure support spans {cells} cells, need at least 2")]
    GridTooCoarse { cells: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("configuration error: {0}")]
    ConfigParse(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_check(context: &str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { context: context.to_string(), expected, found })
    }
}
