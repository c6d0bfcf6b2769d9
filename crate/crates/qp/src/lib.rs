//! Sparse convex quadratic programming.
//!
//! Problems have the form
//!
//! ```txt
//! minimize    ½ xᵀP x + qᵀx + c
//! subject to  A x = b,  G x ≤ h,  l ≤ x ≤ u
//! ```
//!
//! and are solved by a primal-dual interior point method with a sparse
//! quasi-definite LDLᵀ factorization. Multipliers follow the Lagrangian
//! `L = f + yᵀ(Ax − b) + zᵀ(Gx − h) − z_lᵀ(x − l) + z_uᵀ(x − u)` with
//! `z, z_l, z_u ≥ 0`.

mod error;
mod ipm;
pub mod ldl;
pub mod ordering;
mod problem;
pub mod sparse;

pub use error::QpError;
pub use ipm::{solve_lp, solve_qp, SolverOptions};
pub use problem::{kkt_residuals, KktResiduals, QpBuilder, QpProblem, QpSolution, QpStatus};
pub use sparse::{CsrMatrix, Triplets};
