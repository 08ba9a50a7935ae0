use thiserror::Error;

use crate::gramians::AffineGramian;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parameter {index} = {value} lies outside [{lower}, {upper}]")]
    Domain {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("matrix is not orthonormal (deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },

    #[error(
        "vertex enumeration over {n_params} parameters exceeds the limit of {limit}; \
         use a sampled evaluation set instead"
    )]
    Capacity { n_params: usize, limit: usize },

    #[error("system is not stable: {0}")]
    Unstable(String),

    #[error("LMI problem is infeasible: {0}")]
    Infeasible(String),

    #[error("SDP solver stopped after {iterations} iterations without converging")]
    SolverStall {
        iterations: usize,
        best: Box<AffineGramian>,
    },

    #[error("singular evaluation: {0}")]
    Singular(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors that come from the numerics rather than from input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Unstable(_)
                | Error::SolverStall { .. }
                | Error::Singular(_)
                | Error::Degenerate(_)
                | Error::Numerical(_)
        )
    }
}
