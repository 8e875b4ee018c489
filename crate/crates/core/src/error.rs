use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("basis parse error at column {column}: {message}")]
    BasisParse { column: usize, message: String },

    #[error("basis `{family}` is invalid: {reason}")]
    InvalidBasis { family: &'static str, reason: String },

    #[error(
        "policy basis does not span input-map products: weight {value_index}, row {row} \
         leaves residual {residual:e}"
    )]
    WuMapResidual {
        value_index: usize,
        row: usize,
        residual: f64,
    },

    #[error("non-finite value while evaluating {0}")]
    NonFinite(&'static str),

    #[error("state exceeded divergence bound {bound:e} at t = {time} s")]
    Diverged { time: f64, bound: f64 },

    #[error("pair (A, B) is not stabilizable or the Hamiltonian has imaginary-axis eigenvalues")]
    NotStabilizable,

    #[error("Riccati solve did not reach tolerance (residual {0:e})")]
    RiccatiResidual(f64),

    #[error("regression matrix is rank deficient ({rank} of {cols} columns); excitation is insufficient")]
    RankDeficient { rank: usize, cols: usize },

    #[error("{0} did not converge within {1} iterations")]
    IterationCap(&'static str, usize),

    #[error("{0} is not positive definite")]
    NotPositive(&'static str),

    #[error("matrix pseudoinverse is ill conditioned: rank {rank} < {required}")]
    IllConditioned { rank: usize, required: usize },

    #[error("matrix is singular: {0}")]
    Singular(&'static str),

    #[error("trajectory is too short: {0}")]
    TrajectoryTooShort(String),

    #[error("no usable samples: {0}")]
    DegenerateData(String),

    #[error("history stack is not informative (rank {rank} of {required}, sigma_min {sigma_min:e})")]
    NotInformative {
        rank: usize,
        required: usize,
        sigma_min: f64,
    },

    #[error("config error at line {line}, column {column}: {message}")]
    Config {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Config {
            line,
            column,
            message: message.into(),
        }
    }

    pub fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// True for user-input problems (bad config, unknown names, malformed files).
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config { .. }
            | Error::BasisParse { .. }
            | Error::UnknownSystem(_)
            | Error::InvalidParameter { .. }
            | Error::Format { .. } => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
