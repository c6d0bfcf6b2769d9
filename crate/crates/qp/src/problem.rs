//! Problem and solution types.

use std::fmt::Write as _;

use crate::error::QpError;
use crate::ldl::{Factor, PivotGuard, Symbolic};
use crate::sparse::{CsrMatrix, Triplets};

/// Convex quadratic program
///
/// ```txt
/// min  ½ xᵀ P x + qᵀ x + c0
/// s.t. A x  = b
///      G x <= h
///      lower <= x <= upper
/// ```
///
/// `quad` stores the full symmetric `P`. Infinite bounds mean "absent".
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub quad: CsrMatrix,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub eq: CsrMatrix,
    pub eq_rhs: Vec<f64>,
    pub ineq: CsrMatrix,
    pub ineq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QpProblem {
    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let px = self.quad.mul_vec(x);
        let quad: f64 = px.iter().zip(x).map(|(a, b)| a * b).sum();
        let lin: f64 = self.linear.iter().zip(x).map(|(a, b)| a * b).sum();
        0.5 * quad + lin + self.constant
    }

    pub fn is_linear(&self) -> bool {
        self.quad.nnz() == 0
    }

    /// Checks dimensions, finiteness, bound ordering, symmetry and positive
    /// semidefiniteness of the curvature (by attempting a factorization).
    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        let dims_ok = self.quad.nrows() == n
            && self.quad.ncols() == n
            && self.eq.ncols() == n
            && self.eq.nrows() == self.eq_rhs.len()
            && self.ineq.ncols() == n
            && self.ineq.nrows() == self.ineq_rhs.len()
            && self.lower.len() == n
            && self.upper.len() == n;
        if !dims_ok {
            return Err(QpError::Dimension);
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.linear) || !finite(&self.eq_rhs) || !finite(&self.ineq_rhs) || !self.constant.is_finite() {
            return Err(QpError::NonFinite);
        }
        for i in 0..n {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return Err(QpError::Bounds { index: i });
            }
        }
        let mut max_diag = 0.0_f64;
        for (r, c, v) in self.quad.triplets() {
            if !v.is_finite() {
                return Err(QpError::NonFinite);
            }
            if (self.quad.get(c, r) - v).abs() > 1e-12 * (1.0 + v.abs()) {
                return Err(QpError::NotSymmetric { row: r, col: c });
            }
            if r == c {
                max_diag = max_diag.max(v.abs());
            }
        }
        if self.quad.nnz() > 0 && !is_psd(&self.quad, max_diag) {
            return Err(QpError::NotConvex);
        }
        Ok(())
    }

    /// Plain-text summary for triage: dimensions, nonzeros and right-hand sides.
    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "qp n={} m_eq={} m_ineq={}", self.num_vars(), self.num_eq(), self.num_ineq());
        let _ = writeln!(out, "nnz quad={} eq={} ineq={}", self.quad.nnz(), self.eq.nnz(), self.ineq.nnz());
        let _ = writeln!(out, "constant {}", self.constant);
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            let _ = writeln!(out, "var {i} q={} [{lo}, {hi}]", self.linear[i]);
        }
        for (r, c, v) in self.quad.triplets() {
            let _ = writeln!(out, "P {r} {c} {v}");
        }
        for r in 0..self.num_eq() {
            let terms: Vec<String> = self.eq.row(r).map(|(c, v)| format!("{v}*x{c}")).collect();
            let _ = writeln!(out, "eq {r}: {} = {}", terms.join(" + "), self.eq_rhs[r]);
        }
        for r in 0..self.num_ineq() {
            let terms: Vec<String> = self.ineq.row(r).map(|(c, v)| format!("{v}*x{c}")).collect();
            let _ = writeln!(out, "ineq {r}: {} <= {}", terms.join(" + "), self.ineq_rhs[r]);
        }
        out
    }
}

fn is_psd(quad: &CsrMatrix, max_diag: f64) -> bool {
    let n = quad.nrows();
    let shift = 1e-9 * (1.0 + max_diag);
    let mut entries = Vec::new();
    let mut values = Vec::new();
    let mut diag_seen = vec![false; n];
    for (r, c, v) in quad.triplets() {
        if r <= c {
            entries.push((r, c));
            values.push(if r == c { v + shift } else { v });
            if r == c {
                diag_seen[r] = true;
            }
        }
    }
    for (i, seen) in diag_seen.iter().enumerate() {
        if !seen {
            entries.push((i, i));
            values.push(shift);
        }
    }
    let sym = Symbolic::analyze(n, &entries);
    let guard = PivotGuard {
        eps: 0.5 * shift,
        delta: shift,
    };
    Factor::new(&sym, &values, &vec![1.0; n], guard).regularized == 0
}

/// Incremental construction of a [`QpProblem`].
#[derive(Debug, Clone, Default)]
pub struct QpBuilder {
    lower: Vec<f64>,
    upper: Vec<f64>,
    linear: Vec<f64>,
    constant: f64,
    quad: Vec<(usize, usize, f64)>,
    eq: Vec<(usize, usize, f64)>,
    eq_rhs: Vec<f64>,
    ineq: Vec<(usize, usize, f64)>,
    ineq_rhs: Vec<f64>,
}

impl QpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, lower: f64, upper: f64) -> usize {
        self.lower.push(lower);
        self.upper.push(upper);
        self.linear.push(0.0);
        self.lower.len() - 1
    }

    pub fn add_free_var(&mut self) -> usize {
        self.add_var(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn bounds(&self, var: usize) -> (f64, f64) {
        (self.lower[var], self.upper[var])
    }

    pub fn add_linear(&mut self, var: usize, coeff: f64) {
        self.linear[var] += coeff;
    }

    pub fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }

    /// Adds `coeff * x_i * x_j` to the objective (`coeff * x_i^2` when `i == j`).
    pub fn add_quad_term(&mut self, i: usize, j: usize, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        if i == j {
            self.quad.push((i, i, 2.0 * coeff));
        } else {
            self.quad.push((i, j, coeff));
            self.quad.push((j, i, coeff));
        }
    }

    /// Adds `sum terms = rhs` and returns the row index.
    pub fn add_eq(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let r = self.eq_rhs.len();
        for &(c, v) in terms {
            if v != 0.0 {
                self.eq.push((r, c, v));
            }
        }
        self.eq_rhs.push(rhs);
        r
    }

    /// Adds `sum terms <= rhs` and returns the row index.
    pub fn add_le(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let r = self.ineq_rhs.len();
        for &(c, v) in terms {
            if v != 0.0 {
                self.ineq.push((r, c, v));
            }
        }
        self.ineq_rhs.push(rhs);
        r
    }

    /// Adds `sum terms >= rhs` as a negated `<=` row.
    pub fn add_ge(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let neg: Vec<(usize, f64)> = terms.iter().map(|&(c, v)| (c, -v)).collect();
        self.add_le(&neg, -rhs)
    }

    pub fn build(self) -> QpProblem {
        let n = self.lower.len();
        let mut quad = Triplets::new(n, n);
        for (r, c, v) in self.quad {
            quad.push(r, c, v);
        }
        QpProblem {
            quad: quad.to_csr(),
            linear: self.linear,
            constant: self.constant,
            eq: CsrMatrix::from_triplets(self.eq_rhs.len(), n, &self.eq),
            eq_rhs: self.eq_rhs,
            ineq: CsrMatrix::from_triplets(self.ineq_rhs.len(), n, &self.ineq),
            ineq_rhs: self.ineq_rhs,
            lower: self.lower,
            upper: self.upper,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::Unbounded => "unbounded",
            QpStatus::IterationLimit => "iteration-limit",
        }
    }
}

/// Absolute KKT residuals (infinity norms) of a primal-dual point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktResiduals {
    /// `‖P x + q + Aᵀ y + Gᵀ z − z_lower + z_upper‖`
    pub stationarity: f64,
    /// Equality, inequality and bound violation.
    pub primal: f64,
    /// Largest `|slack_i · multiplier_i|`.
    pub complementarity: f64,
    /// Most negative inequality or bound multiplier (0 if none negative).
    pub dual_sign: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.complementarity)
            .max(self.dual_sign)
    }
}

/// Solver output.
///
/// Multipliers follow the Lagrangian
/// `L = f(x) + yᵀ(Ax − b) + zᵀ(Gx − h) + z_upperᵀ(x − upper) + z_lowerᵀ(lower − x)`
/// with `z, z_lower, z_upper >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub residuals: KktResiduals,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Evaluates absolute KKT residuals of `(x, y, z, z_lower, z_upper)` for `problem`.
pub fn kkt_residuals(
    problem: &QpProblem,
    x: &[f64],
    eq_duals: &[f64],
    ineq_duals: &[f64],
    lower_duals: &[f64],
    upper_duals: &[f64],
) -> KktResiduals {
    let n = problem.num_vars();
    let mut grad = problem.quad.mul_vec(x);
    for i in 0..n {
        grad[i] += problem.linear[i] - lower_duals[i] + upper_duals[i];
    }
    problem.eq.mul_t_acc(eq_duals, 1.0, &mut grad);
    problem.ineq.mul_t_acc(ineq_duals, 1.0, &mut grad);
    let stationarity = inf_norm(&grad);

    let ax = problem.eq.mul_vec(x);
    let gx = problem.ineq.mul_vec(x);
    let mut primal = 0.0_f64;
    let mut comp = 0.0_f64;
    let mut dual_sign = 0.0_f64;
    for (r, v) in ax.iter().enumerate() {
        primal = primal.max((v - problem.eq_rhs[r]).abs());
    }
    for (r, v) in gx.iter().enumerate() {
        let slack = problem.ineq_rhs[r] - v;
        primal = primal.max(-slack);
        comp = comp.max((slack * ineq_duals[r]).abs());
        dual_sign = dual_sign.max(-ineq_duals[r]);
    }
    for i in 0..n {
        if problem.lower[i].is_finite() {
            let slack = x[i] - problem.lower[i];
            primal = primal.max(-slack);
            comp = comp.max((slack * lower_duals[i]).abs());
        }
        if problem.upper[i].is_finite() {
            let slack = problem.upper[i] - x[i];
            primal = primal.max(-slack);
            comp = comp.max((slack * upper_duals[i]).abs());
        }
        dual_sign = dual_sign.max(-lower_duals[i]).max(-upper_duals[i]);
    }
    KktResiduals {
        stationarity,
        primal,
        complementarity: comp,
        dual_sign,
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_quad_terms_match_objective() {
        let mut b = QpBuilder::new();
        let x = b.add_free_var();
        let y = b.add_free_var();
        b.add_quad_term(x, x, 3.0);
        b.add_quad_term(x, y, 2.0);
        b.add_quad_term(y, y, 1.0);
        b.add_linear(y, 1.0);
        b.add_constant(5.0);
        let p = b.build();
        // 3x^2 + 2xy + y^2 + y + 5 at (1, 2)
        assert!((p.objective(&[1.0, 2.0]) - 18.0).abs() < 1e-12);
        p.validate().unwrap();
    }

    #[test]
    fn indefinite_curvature_rejected() {
        let mut b = QpBuilder::new();
        let x = b.add_free_var();
        let y = b.add_free_var();
        b.add_quad_term(x, x, 1.0);
        b.add_quad_term(y, y, 1.0);
        b.add_quad_term(x, y, 3.0);
        assert!(matches!(b.build().validate(), Err(QpError::NotConvex)));
    }

    #[test]
    fn semidefinite_curvature_accepted() {
        let mut b = QpBuilder::new();
        let x = b.add_free_var();
        let y = b.add_free_var();
        // (x + y)^2
        b.add_quad_term(x, x, 1.0);
        b.add_quad_term(y, y, 1.0);
        b.add_quad_term(x, y, 2.0);
        b.build().validate().unwrap();
    }
}
