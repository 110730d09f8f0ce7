use thiserror::Error;

/// Errors produced by the detection library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("missing or non-finite value in column `{column}` at row {row}")]
    MissingValue { column: String, row: usize },

    #[error("non-numeric value `{value}` in column `{column}` at row {row}")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },

    #[error("not a covariance matrix: {0}")]
    NotCovariance(String),

    #[error("protected attribute is constant")]
    ConstantProtected,

    #[error("model has zero variance")]
    DegenerateModel,

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),

    #[error("index {index} out of range for {len} inputs")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("protected values must be binary 0/1: {0}")]
    NotBinary(String),

    #[error("solver did not converge after {iterations} iterations (gap {gap:.3e}, residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        gap: f64,
        residual: f64,
        best_alphas: Vec<f64>,
    },

    #[error("grid oracle limited to {max} inputs, got {got}")]
    GridTooLarge { max: usize, got: usize },

    #[error("invalid grid settings: {0}")]
    InvalidGrid(String),

    #[error("rank-deficient design matrix: column `{0}` is (nearly) collinear with the others; consider dropping it")]
    RankDeficient(String),

    #[error("target column `{0}` has zero variance")]
    ConstantTarget(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{phase}: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn in_phase(self, phase: &'static str) -> Error {
        Error::Phase {
            phase,
            source: Box::new(self),
        }
    }
}
