use hydrodispatch_qp::QpError;
use thiserror::Error;

use crate::pipe::FillError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse instance: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("pipeline {pipe}, period {period}: {source}")]
    Fill {
        pipe: String,
        period: i64,
        #[source]
        source: FillError,
    },
    #[error("building {building}: heat balance is singular at period {period}")]
    SingularBuilding { building: String, period: usize },
    #[error("period {period}: pipes {pipes:?} form a cycle with zero transport delay")]
    InstantCycle { period: usize, pipes: Vec<String> },
    #[error("node {node} has no inflow and no supply temperature")]
    MissingSupplyTemp { node: String },
    #[error(transparent)]
    Solver(#[from] QpError),
    #[error("decomposition failed: {0}")]
    Decomposition(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}
