use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("inconsistent problem dimensions")]
    Dimension,
    #[error("problem data contains NaN or infinite coefficients")]
    NonFinite,
    #[error("variable {index} has lower bound above upper bound")]
    Bounds { index: usize },
    #[error("curvature matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("curvature matrix is not positive semidefinite")]
    NotConvex,
    #[error("linear solve requested for a problem with curvature")]
    NotLinear,
}
