use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid lag {lag}: must be below the sample length {t}")]
    InvalidLag { lag: usize, t: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible dimension: p = {p}, T = {t} ({reason})")]
    InfeasibleDimension { p: usize, t: usize, reason: String },

    #[error("insufficient innovation moments: {0} is required")]
    InsufficientMoments(&'static str),

    #[error("nonstationary parameter: |a| = {0} must be below 1")]
    NonStationary(f64),

    #[error("real-valued data required for {0}")]
    RealOnly(&'static str),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
