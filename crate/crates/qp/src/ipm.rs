//! Mehrotra predictor-corrector interior point method.
//!
//! Works on an equilibrated copy of the problem. Bounds are eliminated from
//! the Newton system into the primal diagonal; general inequalities stay in
//! the quasi-definite KKT matrix
//!
//! ```txt
//! [ P + D + δ   Aᵀ    Gᵀ      ]
//! [ A          −δ     0       ]
//! [ G           0    −W − δ   ]
//! ```
//!
//! When the iterates diverge, stall or hit the iteration limit, an elastic
//! phase-one LP decides between infeasible, unbounded and iteration-limit.

use crate::error::QpError;
use crate::ldl::{Factor, PivotGuard, Symbolic};
use crate::problem::{inf_norm, kkt_residuals, QpBuilder, QpProblem, QpSolution, QpStatus};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Relative tolerance on the scaled primal, dual and gap residuals.
    pub tol: f64,
    pub max_iter: usize,
    /// Phase-one threshold above which the problem is declared infeasible.
    pub feasibility_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            feasibility_tol: 1e-6,
        }
    }
}

const STATIC_REG: f64 = 1e-9;
const MAX_REG: f64 = 1e-3;
const STEP_FRACTION: f64 = 0.99;
const DIVERGENCE: f64 = 1e13;
const RUIZ_PASSES: usize = 12;
/// Multiple of the tolerance accepted once the residuals stop improving.
const ACCEPTABLE: f64 = 1e2;
const FLAT_ITERS: usize = 8;

/// Solves a convex QP. See [`QpSolution`] for the multiplier convention.
pub fn solve_qp(problem: &QpProblem, options: &SolverOptions) -> Result<QpSolution, QpError> {
    problem.validate()?;
    Ok(solve_validated(problem, options, true))
}

/// Solves an LP (a problem with zero curvature).
pub fn solve_lp(problem: &QpProblem, options: &SolverOptions) -> Result<QpSolution, QpError> {
    if !problem.is_linear() {
        return Err(QpError::NotLinear);
    }
    solve_qp(problem, options)
}

fn solve_validated(problem: &QpProblem, options: &SolverOptions, allow_phase_one: bool) -> QpSolution {
    let scaled = Scaled::new(problem);
    let outcome = scaled.iterate(options);
    let (x, y, z, zl, zu) = scaled.unscale(&outcome);
    let residuals = kkt_residuals(problem, &x, &y, &z, &zl, &zu);
    let objective = problem.objective(&x);
    let dual_objective = dual_objective(problem, &x, &y, &z, &zl, &zu);

    let status = match outcome.exit {
        Exit::Converged => QpStatus::Optimal,
        Exit::Diverged | Exit::Stalled | Exit::MaxIter => {
            if !allow_phase_one {
                QpStatus::IterationLimit
            } else {
                let infeasibility = phase_one(problem, options);
                if infeasibility > options.feasibility_tol {
                    QpStatus::Infeasible
                } else if has_descent_ray(problem, options) {
                    QpStatus::Unbounded
                } else {
                    QpStatus::IterationLimit
                }
            }
        }
    };
    QpSolution {
        status,
        x,
        eq_duals: y,
        ineq_duals: z,
        lower_duals: zl,
        upper_duals: zu,
        objective,
        dual_objective,
        iterations: outcome.iterations,
        residuals,
    }
}

/// Wolfe dual value `-½xᵀPx - bᵀy - hᵀz + lᵀz_l - uᵀz_u + c0`.
fn dual_objective(p: &QpProblem, x: &[f64], y: &[f64], z: &[f64], zl: &[f64], zu: &[f64]) -> f64 {
    let px = p.quad.mul_vec(x);
    let xpx: f64 = px.iter().zip(x).map(|(a, b)| a * b).sum();
    let by: f64 = p.eq_rhs.iter().zip(y).map(|(a, b)| a * b).sum();
    let hz: f64 = p.ineq_rhs.iter().zip(z).map(|(a, b)| a * b).sum();
    let mut bounds = 0.0;
    for i in 0..p.num_vars() {
        if p.lower[i].is_finite() {
            bounds += p.lower[i] * zl[i];
        }
        if p.upper[i].is_finite() {
            bounds -= p.upper[i] * zu[i];
        }
    }
    -0.5 * xpx - by - hz + bounds + p.constant
}

/// Minimum total violation of the constraints (rows normalized to unit
/// infinity norm), bounds kept hard.
fn phase_one(problem: &QpProblem, options: &SolverOptions) -> f64 {
    let n = problem.num_vars();
    let mut b = QpBuilder::new();
    for i in 0..n {
        b.add_var(problem.lower[i], problem.upper[i]);
    }
    let eq_norms = problem.eq.row_norms_inf();
    for r in 0..problem.num_eq() {
        let s = 1.0 / eq_norms[r].max(1e-300);
        let plus = b.add_var(0.0, f64::INFINITY);
        let minus = b.add_var(0.0, f64::INFINITY);
        b.add_linear(plus, 1.0);
        b.add_linear(minus, 1.0);
        let mut terms: Vec<(usize, f64)> = problem.eq.row(r).map(|(c, v)| (c, v * s)).collect();
        terms.push((plus, -1.0));
        terms.push((minus, 1.0));
        b.add_eq(&terms, problem.eq_rhs[r] * s);
    }
    let ineq_norms = problem.ineq.row_norms_inf();
    for r in 0..problem.num_ineq() {
        let s = 1.0 / ineq_norms[r].max(1e-300);
        let t = b.add_var(0.0, f64::INFINITY);
        b.add_linear(t, 1.0);
        let mut terms: Vec<(usize, f64)> = problem.ineq.row(r).map(|(c, v)| (c, v * s)).collect();
        terms.push((t, -1.0));
        b.add_le(&terms, problem.ineq_rhs[r] * s);
    }
    let lp = b.build();
    let opts = SolverOptions {
        max_iter: options.max_iter.max(60),
        ..*options
    };
    let sol = solve_validated(&lp, &opts, false);
    sol.objective.max(0.0)
}

/// Looks for a direction `d` in the recession cone of the feasible set with
/// `P d = 0` and `qᵀd < 0`, normalized to the unit box.
fn has_descent_ray(problem: &QpProblem, options: &SolverOptions) -> bool {
    let n = problem.num_vars();
    let mut b = QpBuilder::new();
    for i in 0..n {
        let lo = if problem.lower[i].is_finite() { 0.0 } else { -1.0 };
        let hi = if problem.upper[i].is_finite() { 0.0 } else { 1.0 };
        b.add_var(lo, hi);
        b.add_linear(i, problem.linear[i]);
    }
    for r in 0..problem.num_eq() {
        let terms: Vec<(usize, f64)> = problem.eq.row(r).collect();
        b.add_eq(&terms, 0.0);
    }
    for r in 0..problem.num_ineq() {
        let terms: Vec<(usize, f64)> = problem.ineq.row(r).collect();
        b.add_le(&terms, 0.0);
    }
    for r in 0..n {
        let terms: Vec<(usize, f64)> = problem.quad.row(r).collect();
        if !terms.is_empty() {
            b.add_eq(&terms, 0.0);
        }
    }
    let lp = b.build();
    let sol = solve_validated(&lp, options, false);
    let q_norm = inf_norm(&problem.linear).max(1.0);
    sol.is_optimal() && sol.objective < -options.feasibility_tol * q_norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Exit {
    Converged,
    Diverged,
    Stalled,
    MaxIter,
}

struct Outcome {
    exit: Exit,
    iterations: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
}

/// Equilibrated problem data.
struct Scaled {
    n: usize,
    quad: CsrMatrix,
    q: Vec<f64>,
    /// Equality rows: the user's rows followed by rows pinning fixed variables.
    a: CsrMatrix,
    b: Vec<f64>,
    g: CsrMatrix,
    h: Vec<f64>,
    lower: Vec<(usize, f64)>,
    upper: Vec<(usize, f64)>,
    col_scale: Vec<f64>,
    eq_scale: Vec<f64>,
    ineq_scale: Vec<f64>,
    cost_scale: f64,
    user_eq: usize,
}

impl Scaled {
    fn new(p: &QpProblem) -> Self {
        let n = p.num_vars();
        let mut a_entries: Vec<(usize, usize, f64)> = p.eq.triplets().collect();
        let mut b = p.eq_rhs.clone();
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for i in 0..n {
            let (lo, hi) = (p.lower[i], p.upper[i]);
            if lo == hi {
                a_entries.push((b.len(), i, 1.0));
                b.push(lo);
                continue;
            }
            if lo.is_finite() {
                lower.push((i, lo));
            }
            if hi.is_finite() {
                upper.push((i, hi));
            }
        }
        let me = b.len();
        let mut quad: Vec<(usize, usize, f64)> = p.quad.triplets().collect();
        let mut g_entries: Vec<(usize, usize, f64)> = p.ineq.triplets().collect();
        let mg = p.num_ineq();

        // Ruiz equilibration of the symmetric KKT pattern [P Aᵀ Gᵀ; A 0 0; G 0 0].
        let mut d = vec![1.0; n];
        let mut e_a = vec![1.0; me];
        let mut e_g = vec![1.0; mg];
        for _ in 0..RUIZ_PASSES {
            let mut col = vec![0.0_f64; n];
            let mut ra = vec![0.0_f64; me];
            let mut rg = vec![0.0_f64; mg];
            for &(r, c, v) in &quad {
                col[c] = col[c].max(v.abs());
                col[r] = col[r].max(v.abs());
            }
            for &(r, c, v) in &a_entries {
                col[c] = col[c].max(v.abs());
                ra[r] = ra[r].max(v.abs());
            }
            for &(r, c, v) in &g_entries {
                col[c] = col[c].max(v.abs());
                rg[r] = rg[r].max(v.abs());
            }
            let inv_sqrt = |v: f64| if v > 1e-12 { 1.0 / v.sqrt() } else { 1.0 };
            let sc: Vec<f64> = col.iter().map(|&v| inv_sqrt(v)).collect();
            let sa: Vec<f64> = ra.iter().map(|&v| inv_sqrt(v)).collect();
            let sg: Vec<f64> = rg.iter().map(|&v| inv_sqrt(v)).collect();
            for t in quad.iter_mut() {
                t.2 *= sc[t.0] * sc[t.1];
            }
            for t in a_entries.iter_mut() {
                t.2 *= sa[t.0] * sc[t.1];
            }
            for t in g_entries.iter_mut() {
                t.2 *= sg[t.0] * sc[t.1];
            }
            for i in 0..n {
                d[i] *= sc[i];
            }
            for r in 0..me {
                e_a[r] *= sa[r];
            }
            for r in 0..mg {
                e_g[r] *= sg[r];
            }
        }
        let mut q: Vec<f64> = (0..n).map(|i| p.linear[i] * d[i]).collect();
        let b: Vec<f64> = (0..me).map(|r| b[r] * e_a[r]).collect();
        let h: Vec<f64> = (0..mg).map(|r| p.ineq_rhs[r] * e_g[r]).collect();
        let lower: Vec<(usize, f64)> = lower.into_iter().map(|(i, v)| (i, v / d[i])).collect();
        let upper: Vec<(usize, f64)> = upper.into_iter().map(|(i, v)| (i, v / d[i])).collect();

        let cost_norm = inf_norm(&q).max(quad.iter().fold(0.0_f64, |m, t| m.max(t.2.abs())));
        let cost_scale = if cost_norm > 0.0 { (1.0 / cost_norm).clamp(1e-6, 1e6) } else { 1.0 };
        for v in q.iter_mut() {
            *v *= cost_scale;
        }
        for t in quad.iter_mut() {
            t.2 *= cost_scale;
        }

        Self {
            n,
            quad: CsrMatrix::from_triplets(n, n, &quad),
            q,
            a: CsrMatrix::from_triplets(me, n, &a_entries),
            b,
            g: CsrMatrix::from_triplets(mg, n, &g_entries),
            h,
            lower,
            upper,
            col_scale: d,
            eq_scale: e_a,
            ineq_scale: e_g,
            cost_scale,
            user_eq: p.num_eq(),
        }
    }

    fn unscale(&self, o: &Outcome) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let c = self.cost_scale;
        let x: Vec<f64> = (0..self.n).map(|i| o.x[i] * self.col_scale[i]).collect();
        let y: Vec<f64> = (0..self.user_eq).map(|r| o.y[r] * self.eq_scale[r] / c).collect();
        let z: Vec<f64> = (0..self.h.len()).map(|r| o.z[r] * self.ineq_scale[r] / c).collect();
        let mut zl = vec![0.0; self.n];
        let mut zu = vec![0.0; self.n];
        for (k, &(i, _)) in self.lower.iter().enumerate() {
            zl[i] = o.zl[k] / (c * self.col_scale[i]);
        }
        for (k, &(i, _)) in self.upper.iter().enumerate() {
            zu[i] = o.zu[k] / (c * self.col_scale[i]);
        }
        // Multipliers of rows pinning fixed variables move onto the bounds.
        for r in self.user_eq..self.b.len() {
            let (i, coeff) = self.a.row(r).next().expect("pin row has one entry");
            let mult = o.y[r] * coeff / (c * self.col_scale[i]);
            if mult >= 0.0 {
                zu[i] = mult;
            } else {
                zl[i] = -mult;
            }
        }
        (x, y, z, zl, zu)
    }

    fn iterate(&self, options: &SolverOptions) -> Outcome {
        let kkt = Kkt::new(self);
        let n = self.n;
        let me = self.b.len();
        let mg = self.h.len();
        let nl = self.lower.len();
        let nu = self.upper.len();
        let m_tot = mg + nl + nu;

        // Starting point from the regularized least-squares system with unit weights.
        let mut x;
        let mut y;
        let mut s_g;
        let mut z_g;
        let mut s_l;
        let mut z_l;
        let mut s_u;
        let mut z_u;
        {
            let mut diag1 = vec![0.0; n];
            for &(i, _) in self.lower.iter().chain(self.upper.iter()) {
                diag1[i] += 1.0;
            }
            let w = vec![1.0; mg];
            let factor = kkt.factor(self, &diag1, &w, STATIC_REG);
            let mut rhs = vec![0.0; n + me + mg];
            for i in 0..n {
                rhs[i] = -self.q[i];
            }
            for &(i, lo) in &self.lower {
                rhs[i] += lo;
            }
            for &(i, hi) in &self.upper {
                rhs[i] += hi;
            }
            rhs[n..n + me].copy_from_slice(&self.b);
            rhs[n + me..].copy_from_slice(&self.h);
            let sol = kkt.solve(self, &factor, &diag1, &w, &rhs);
            x = sol[..n].to_vec();
            y = sol[n..n + me].to_vec();
            let gx = self.g.mul_vec(&x);
            s_g = (0..mg).map(|r| self.h[r] - gx[r]).collect::<Vec<_>>();
            s_l = self.lower.iter().map(|&(i, lo)| x[i] - lo).collect::<Vec<_>>();
            s_u = self.upper.iter().map(|&(i, hi)| hi - x[i]).collect::<Vec<_>>();
            z_g = s_g.iter().map(|v| -v).collect::<Vec<_>>();
            z_l = s_l.iter().map(|v| -v).collect::<Vec<_>>();
            z_u = s_u.iter().map(|v| -v).collect::<Vec<_>>();
            let shift = |v: &mut [Vec<f64>]| {
                let worst = v.iter().flat_map(|w| w.iter()).fold(f64::NEG_INFINITY, |m, &a| m.max(-a));
                if worst.is_finite() && worst >= 0.0 {
                    for w in v.iter_mut() {
                        for a in w.iter_mut() {
                            *a += 1.0 + worst;
                        }
                    }
                }
            };
            let mut ss = [std::mem::take(&mut s_g), std::mem::take(&mut s_l), std::mem::take(&mut s_u)];
            shift(&mut ss);
            let [a, b2, c] = ss;
            s_g = a;
            s_l = b2;
            s_u = c;
            let mut zz = [std::mem::take(&mut z_g), std::mem::take(&mut z_l), std::mem::take(&mut z_u)];
            shift(&mut zz);
            let [a, b2, c] = zz;
            z_g = a;
            z_l = b2;
            z_u = c;
        }

        let b_norm = inf_norm(&self.b)
            .max(inf_norm(&self.h))
            .max(self.lower.iter().fold(0.0_f64, |m, t| m.max(t.1.abs())))
            .max(self.upper.iter().fold(0.0_f64, |m, t| m.max(t.1.abs())));
        let q_norm = inf_norm(&self.q);
        let mut stalls = 0;
        let mut best_merit = f64::INFINITY;
        let mut flat = 0;
        let mut acceptable: bool;
        let mut iterations = 0;
        let exit;

        loop {
            // Residuals.
            let mut r_d = self.quad.mul_vec(&x);
            for i in 0..n {
                r_d[i] += self.q[i];
            }
            self.a.mul_t_acc(&y, 1.0, &mut r_d);
            self.g.mul_t_acc(&z_g, 1.0, &mut r_d);
            for (k, &(i, _)) in self.lower.iter().enumerate() {
                r_d[i] -= z_l[k];
            }
            for (k, &(i, _)) in self.upper.iter().enumerate() {
                r_d[i] += z_u[k];
            }
            let ax = self.a.mul_vec(&x);
            let r_p: Vec<f64> = (0..me).map(|r| ax[r] - self.b[r]).collect();
            let gx = self.g.mul_vec(&x);
            let r_g: Vec<f64> = (0..mg).map(|r| gx[r] + s_g[r] - self.h[r]).collect();
            let r_l: Vec<f64> = self.lower.iter().enumerate().map(|(k, &(i, lo))| -x[i] + s_l[k] + lo).collect();
            let r_u: Vec<f64> = self.upper.iter().enumerate().map(|(k, &(i, hi))| x[i] + s_u[k] - hi).collect();

            let sz: f64 = dot(&s_g, &z_g) + dot(&s_l, &z_l) + dot(&s_u, &z_u);
            let mu = if m_tot > 0 { sz / m_tot as f64 } else { 0.0 };
            let pobj = {
                let px = self.quad.mul_vec(&x);
                0.5 * dot(&px, &x) + dot(&self.q, &x)
            };
            let pres = inf_norm(&r_p).max(inf_norm(&r_g)).max(inf_norm(&r_l)).max(inf_norm(&r_u)) / (1.0 + b_norm);
            let dres = inf_norm(&r_d) / (1.0 + q_norm);
            // Complementarity measured in the caller's cost units.
            let abs_gap = sz / self.cost_scale;
            let rel_gap = sz / (self.cost_scale + pobj.abs());
            let internal_tol = 0.1 * options.tol;
            let gap_ok = abs_gap <= internal_tol || rel_gap <= 1e-3 * internal_tol;
            log::trace!("ipm {iterations:3}: pres {pres:.2e} dres {dres:.2e} gap {abs_gap:.2e} mu {mu:.2e}");
            if pres <= internal_tol && dres <= internal_tol && gap_ok {
                exit = Exit::Converged;
                break;
            }
            // Residuals at a floor set by rounding: accept a looser point.
            let merit = pres.max(dres);
            if merit < 0.9 * best_merit {
                best_merit = merit;
                flat = 0;
            } else {
                flat += 1;
            }
            acceptable = merit <= ACCEPTABLE * internal_tol
                && (abs_gap <= ACCEPTABLE * internal_tol || rel_gap <= 1e-3 * ACCEPTABLE * internal_tol);
            if flat >= FLAT_ITERS && acceptable {
                exit = Exit::Converged;
                break;
            }
            let primal_big = inf_norm(&x) > DIVERGENCE;
            let dual_big = inf_norm(&y).max(inf_norm(&z_g)).max(inf_norm(&z_l)).max(inf_norm(&z_u)) > DIVERGENCE;
            if primal_big || dual_big {
                exit = Exit::Diverged;
                break;
            }
            if iterations >= options.max_iter {
                exit = if acceptable { Exit::Converged } else { Exit::MaxIter };
                break;
            }
            iterations += 1;

            // Newton matrix.
            let mut diag1 = vec![0.0; n];
            for (k, &(i, _)) in self.lower.iter().enumerate() {
                diag1[i] += z_l[k] / s_l[k];
            }
            for (k, &(i, _)) in self.upper.iter().enumerate() {
                diag1[i] += z_u[k] / s_u[k];
            }
            let w: Vec<f64> = (0..mg).map(|r| s_g[r] / z_g[r]).collect();
            let direction = |factor: &Factor, rc_g: &[f64], rc_l: &[f64], rc_u: &[f64]| -> Direction {
                let mut rhs = vec![0.0; n + me + mg];
                for i in 0..n {
                    rhs[i] = -r_d[i];
                }
                for (k, &(i, _)) in self.lower.iter().enumerate() {
                    rhs[i] += (rc_l[k] + z_l[k] * r_l[k]) / s_l[k];
                }
                for (k, &(i, _)) in self.upper.iter().enumerate() {
                    rhs[i] -= (rc_u[k] + z_u[k] * r_u[k]) / s_u[k];
                }
                for r in 0..me {
                    rhs[n + r] = -r_p[r];
                }
                for r in 0..mg {
                    rhs[n + me + r] = -r_g[r] - rc_g[r] / z_g[r];
                }
                let sol = kkt.solve(self, factor, &diag1, &w, &rhs);
                let dx = sol[..n].to_vec();
                let dy = sol[n..n + me].to_vec();
                let dz_g = sol[n + me..].to_vec();
                let gdx = self.g.mul_vec(&dx);
                let ds_g: Vec<f64> = (0..mg).map(|r| -r_g[r] - gdx[r]).collect();
                let mut ds_l = Vec::with_capacity(nl);
                let mut dz_l = Vec::with_capacity(nl);
                for (k, &(i, _)) in self.lower.iter().enumerate() {
                    ds_l.push(-r_l[k] + dx[i]);
                    dz_l.push((z_l[k] * (-dx[i]) + rc_l[k] + z_l[k] * r_l[k]) / s_l[k]);
                }
                let mut ds_u = Vec::with_capacity(nu);
                let mut dz_u = Vec::with_capacity(nu);
                for (k, &(i, _)) in self.upper.iter().enumerate() {
                    ds_u.push(-r_u[k] - dx[i]);
                    dz_u.push((z_u[k] * dx[i] + rc_u[k] + z_u[k] * r_u[k]) / s_u[k]);
                }
                Direction {
                    dx,
                    dy,
                    ds_g,
                    dz_g,
                    ds_l,
                    dz_l,
                    ds_u,
                    dz_u,
                }
            };

            let neg_prod = |s: &[f64], z: &[f64]| -> Vec<f64> { s.iter().zip(z).map(|(a, b)| -a * b).collect() };
            // Retry with heavier regularization when the factor breaks down.
            let mut reg = STATIC_REG;
            let (factor, aff) = loop {
                let factor = kkt.factor(self, &diag1, &w, reg);
                let aff = direction(&factor, &neg_prod(&s_g, &z_g), &neg_prod(&s_l, &z_l), &neg_prod(&s_u, &z_u));
                if aff.is_finite() || reg >= MAX_REG {
                    break (factor, aff);
                }
                reg *= 100.0;
            };
            let alpha_aff = aff.max_step(&s_g, &z_g, &s_l, &z_l, &s_u, &z_u).min(1.0);
            let (rc_g, rc_l, rc_u) = if m_tot > 0 {
                let after = |s: &[f64], ds: &[f64], z: &[f64], dz: &[f64]| -> f64 {
                    (0..s.len()).map(|k| (s[k] + alpha_aff * ds[k]) * (z[k] + alpha_aff * dz[k])).sum()
                };
                let mu_aff = (after(&s_g, &aff.ds_g, &z_g, &aff.dz_g)
                    + after(&s_l, &aff.ds_l, &z_l, &aff.dz_l)
                    + after(&s_u, &aff.ds_u, &z_u, &aff.dz_u))
                    / m_tot as f64;
                let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
                let corr = |s: &[f64], z: &[f64], ds: &[f64], dz: &[f64]| -> Vec<f64> {
                    (0..s.len()).map(|k| sigma * mu - s[k] * z[k] - ds[k] * dz[k]).collect()
                };
                (
                    corr(&s_g, &z_g, &aff.ds_g, &aff.dz_g),
                    corr(&s_l, &z_l, &aff.ds_l, &aff.dz_l),
                    corr(&s_u, &z_u, &aff.ds_u, &aff.dz_u),
                )
            } else {
                (Vec::new(), Vec::new(), Vec::new())
            };
            let dir = if m_tot > 0 { direction(&factor, &rc_g, &rc_l, &rc_u) } else { aff };
            if !dir.is_finite() {
                exit = if acceptable { Exit::Converged } else { Exit::Stalled };
                break;
            }
            let alpha = (STEP_FRACTION * dir.max_step(&s_g, &z_g, &s_l, &z_l, &s_u, &z_u)).min(1.0);
            if alpha < 1e-10 {
                stalls += 1;
                if stalls >= 5 {
                    exit = if acceptable { Exit::Converged } else { Exit::Stalled };
                    break;
                }
            } else {
                stalls = 0;
            }
            axpy(alpha, &dir.dx, &mut x);
            axpy(alpha, &dir.dy, &mut y);
            axpy(alpha, &dir.ds_g, &mut s_g);
            axpy(alpha, &dir.dz_g, &mut z_g);
            axpy(alpha, &dir.ds_l, &mut s_l);
            axpy(alpha, &dir.dz_l, &mut z_l);
            axpy(alpha, &dir.ds_u, &mut s_u);
            axpy(alpha, &dir.dz_u, &mut z_u);
        }

        Outcome {
            exit,
            iterations,
            x,
            y,
            z: z_g,
            zl: z_l,
            zu: z_u,
        }
    }
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    ds_g: Vec<f64>,
    dz_g: Vec<f64>,
    ds_l: Vec<f64>,
    dz_l: Vec<f64>,
    ds_u: Vec<f64>,
    dz_u: Vec<f64>,
}

impl Direction {
    fn is_finite(&self) -> bool {
        [&self.dx, &self.dy, &self.ds_g, &self.dz_g, &self.ds_l, &self.dz_l, &self.ds_u, &self.dz_u]
            .iter()
            .all(|v| v.iter().all(|a| a.is_finite()))
    }

    fn max_step(&self, s_g: &[f64], z_g: &[f64], s_l: &[f64], z_l: &[f64], s_u: &[f64], z_u: &[f64]) -> f64 {
        let mut alpha = f64::INFINITY;
        let mut limit = |v: &[f64], dv: &[f64]| {
            for (a, d) in v.iter().zip(dv) {
                if *d < 0.0 {
                    alpha = alpha.min(-a / d);
                }
            }
        };
        limit(s_g, &self.ds_g);
        limit(z_g, &self.dz_g);
        limit(s_l, &self.ds_l);
        limit(z_l, &self.dz_l);
        limit(s_u, &self.ds_u);
        limit(z_u, &self.dz_u);
        alpha
    }
}

/// KKT matrix pattern and its fixed entries.
struct Kkt {
    sym: Symbolic,
    values: Vec<f64>,
    /// Position in `values` of every diagonal entry.
    diag_pos: Vec<usize>,
    quad_diag: Vec<f64>,
}

impl Kkt {
    fn new(s: &Scaled) -> Self {
        let n = s.n;
        let me = s.b.len();
        let mg = s.h.len();
        let dim = n + me + mg;
        let mut entries = Vec::new();
        let mut values = Vec::new();
        let mut diag_pos = vec![0usize; dim];
        let mut quad_diag = vec![0.0; n];
        for i in 0..n {
            diag_pos[i] = entries.len();
            entries.push((i, i));
            values.push(0.0);
        }
        for (r, c, v) in s.quad.triplets() {
            if r == c {
                quad_diag[r] += v;
            } else if r < c {
                entries.push((r, c));
                values.push(v);
            }
        }
        for r in 0..me {
            for (c, v) in s.a.row(r) {
                entries.push((c, n + r));
                values.push(v);
            }
            diag_pos[n + r] = entries.len();
            entries.push((n + r, n + r));
            values.push(0.0);
        }
        for r in 0..mg {
            for (c, v) in s.g.row(r) {
                entries.push((c, n + me + r));
                values.push(v);
            }
            diag_pos[n + me + r] = entries.len();
            entries.push((n + me + r, n + me + r));
            values.push(0.0);
        }
        let sym = Symbolic::analyze(dim, &entries);
        Self {
            sym,
            values,
            diag_pos,
            quad_diag,
        }
    }

    fn factor(&self, s: &Scaled, diag1: &[f64], w: &[f64], reg: f64) -> Factor {
        let n = s.n;
        let me = s.b.len();
        let mut values = self.values.clone();
        let mut signs = vec![1.0; values.len().max(self.diag_pos.len())];
        signs.truncate(self.diag_pos.len());
        for i in 0..n {
            values[self.diag_pos[i]] = self.quad_diag[i] + diag1[i] + reg;
        }
        for r in 0..me {
            values[self.diag_pos[n + r]] = -reg;
            signs[n + r] = -1.0;
        }
        for (r, &wr) in w.iter().enumerate() {
            values[self.diag_pos[n + me + r]] = -wr - reg;
            signs[n + me + r] = -1.0;
        }
        Factor::new(&self.sym, &values, &signs, PivotGuard::default())
    }

    /// Solves with the regularized factor and refines against the exact matrix.
    fn solve(&self, s: &Scaled, factor: &Factor, diag1: &[f64], w: &[f64], rhs: &[f64]) -> Vec<f64> {
        let mut sol = rhs.to_vec();
        factor.solve(&self.sym, &mut sol);
        let rhs_norm = inf_norm(rhs).max(1e-300);
        for _ in 0..4 {
            let ksol = self.apply(s, diag1, w, &sol);
            let mut res: Vec<f64> = rhs.iter().zip(&ksol).map(|(a, b)| a - b).collect();
            if inf_norm(&res) <= 1e-14 * rhs_norm {
                break;
            }
            factor.solve(&self.sym, &mut res);
            for (a, d) in sol.iter_mut().zip(&res) {
                *a += d;
            }
        }
        sol
    }

    /// Product with the unregularized KKT matrix.
    fn apply(&self, s: &Scaled, diag1: &[f64], w: &[f64], v: &[f64]) -> Vec<f64> {
        let n = s.n;
        let me = s.b.len();
        let (vx, rest) = v.split_at(n);
        let (vy, vz) = rest.split_at(me);
        let mut out1 = s.quad.mul_vec(vx);
        for i in 0..n {
            out1[i] += diag1[i] * vx[i];
        }
        s.a.mul_t_acc(vy, 1.0, &mut out1);
        s.g.mul_t_acc(vz, 1.0, &mut out1);
        let out2 = s.a.mul_vec(vx);
        let mut out3 = s.g.mul_vec(vx);
        for (r, o) in out3.iter_mut().enumerate() {
            *o -= w[r] * vz[r];
        }
        let mut out = out1;
        out.extend(out2);
        out.extend(out3);
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, dx: &[f64], x: &mut [f64]) {
    for (a, d) in x.iter_mut().zip(dx) {
        *a += alpha * d;
    }
}
