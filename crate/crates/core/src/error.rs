use thiserror::Error;

use crate::graph::VertexKey;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("oracle inconsistency at vertex {vertex}: {detail}")]
    Oracle { vertex: VertexKey, detail: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("vertex {0} is not in the working vertex set")]
    UnknownVertex(VertexKey),

    #[error("linear solve did not converge: residual {residual:e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("truncation sequence not Cauchy: last difference {last_difference:e} at level {level} (tolerance {tolerance:e})")]
    NotCauchy {
        level: usize,
        last_difference: f64,
        tolerance: f64,
    },

    #[error("consistency violation: {0}")]
    ConsistencyViolation(String),

    #[error("step budget of {budget} exhausted")]
    Timeout {
        budget: usize,
        partial: Option<Box<crate::walk::Trajectory>>,
    },

    #[error("too many spanning trees to enumerate ({0})")]
    CountOverflow(f64),

    #[error("covariance is not positive semidefinite: eigenvalue {eigenvalue:e} against scale {scale:e}")]
    NotPsd { eigenvalue: f64, scale: f64 },

    #[error("planar map: {0}")]
    Planar(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of a numerical procedure, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Singular(_)
                | Error::NotCauchy { .. }
                | Error::ConsistencyViolation(_)
                | Error::Timeout { .. }
                | Error::NotPsd { .. }
        )
    }
}
