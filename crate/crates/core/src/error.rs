use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("enumeration over {p} coordinates exceeds the guard of {p_max}")]
    EnumerationGuard { p: usize, p_max: usize },

    #[error("model is not a subset of the larger model")]
    NotNested,

    #[error("model set is empty")]
    EmptyModelSet,

    #[error("dataset has no ground truth attached")]
    MissingTruth,

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::InvalidPrior(_) | Error::Parse(_) | Error::Io(_) => 2,
            Error::Dimension(_) | Error::MissingTruth | Error::NotNested | Error::EmptyModelSet => 2,
            Error::NoConvergence { .. } | Error::Numerical(_) => 3,
            Error::EnumerationGuard { .. } => 4,
        }
    }
}
