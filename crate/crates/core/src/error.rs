use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("operator is not Hermitian (max |H - H†| = {0:.3e})")]
    NotHermitian(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix exponential overflowed or produced non-finite entries")]
    Overflow,

    #[error("invalid value for `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    /// The eigenvector matrix restricted to its block-diagonal part is singular.
    /// `overlap[k][b]` is the weight of eigenvector `k` inside block `b`.
    #[error(
        "state-block assignment ambiguous (smallest singular value of X_BD = {min_singular:.3e})"
    )]
    AmbiguousBlockAssignment {
        min_singular: f64,
        overlap: Vec<Vec<f64>>,
    },

    #[error("insufficient sampling: {0}")]
    InsufficientSampling(String),

    #[error("fit did not converge after {starts} starts (best rms residual {best_residual:.3e})")]
    FitNotConverged { starts: usize, best_residual: f64 },

    #[error("propagation not converged: halving dt changed the result by {change:.3e}; use a smaller dt")]
    StepNotConverged { change: f64 },

    #[error("no entangling point in scanned window")]
    NoEntanglingPoint,

    #[error("no conditional drive detected (amplitude {amplitude:.3e} MHz)")]
    NoConditionalDrive { amplitude: f64 },

    #[error("sweep does not bracket the zero crossing; try amplitudes around {suggested_low:.3} to {suggested_high:.3} MHz")]
    NotBracketed {
        suggested_low: f64,
        suggested_high: f64,
    },

    #[error("too many failed sweep points: {failed} of {total}")]
    SweepFailed { failed: usize, total: usize },

    #[error("requested rotation unreachable: need ZX = {required:.3} MHz, max achievable {max_achievable:.3} MHz")]
    Unreachable { required: f64, max_achievable: f64 },

    #[error("{0}")]
    Degenerate(String),

    #[error("benchmark fit failed: {0}")]
    BenchmarkFit(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
