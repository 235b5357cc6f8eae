use thiserror::Error;

/// Errors raised anywhere in the abstraction, bounding and synthesis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("point {point:?} lies outside the state box")]
    OutsideBox { point: Vec<f64> },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("covariance matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("quadrature did not converge (estimated error {error_estimate:.3e}, tolerance {tolerance:.3e})")]
    Quadrature {
        error_estimate: f64,
        tolerance: f64,
    },

    #[error("initial distribution drifted from unit mass by {drift:.3e} before renormalization")]
    InitialMassDrift { drift: f64 },

    #[error("infeasible ambiguity row {row}{}: sum(lower)={lower_sum:.12}, sum(upper)={upper_sum:.12}", action.map(|a| format!(" (action {a})")).unwrap_or_default())]
    InfeasibleRow {
        row: usize,
        action: Option<usize>,
        lower_sum: f64,
        upper_sum: f64,
    },

    #[error("model has no stage cost; {0}")]
    MissingCost(&'static str),

    #[error("stage cost is neither monotone nor equipped with a Lipschitz constant")]
    MissingCostLipschitz,

    #[error("size guard exceeded: {0}")]
    Guard(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("zero density encountered along a sampled trajectory at step {step}")]
    ZeroDensity { step: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2: configuration, 3: numerical failure, 4: guard violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::Json(_)
            | Error::InvalidBox(_)
            | Error::InvalidModel(_)
            | Error::NotPositiveDefinite
            | Error::MissingCost(_)
            | Error::MissingCostLipschitz
            | Error::DimensionMismatch { .. }
            | Error::Io { .. } => 2,
            Error::Quadrature { .. }
            | Error::InitialMassDrift { .. }
            | Error::InfeasibleRow { .. }
            | Error::ZeroDensity { .. } => 3,
            Error::Guard(_) | Error::OutsideBox { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
