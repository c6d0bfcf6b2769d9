//! Random convex QPs with known feasible points, and brute-force optimum oracles.
#![allow(dead_code)]

use hydrodispatch_qp::{QpBuilder, QpProblem};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Dense {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// All inequalities including bounds, as rows of `g x <= h`.
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

pub fn random_feasible(rng: &mut ChaCha8Rng, curvature: bool) -> (QpProblem, Dense) {
    let n = rng.gen_range(2..=8);
    let me = rng.gen_range(0..=2.min(n - 1));
    let mg = rng.gen_range(1..=5);
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut p = DMatrix::zeros(n, n);
    if curvature {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        p = m.transpose() * &m + DMatrix::identity(n, n) * 0.1;
    }
    let q = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let a = DMatrix::from_fn(me, n, |_, _| rng.gen_range(-1.0..1.0));
    let x0v = DVector::from_vec(x0.clone());
    let bvec = &a * &x0v;
    let g = DMatrix::from_fn(mg, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = &g * &x0v + DVector::from_fn(mg, |_, _| rng.gen_range(0.0..1.0));

    let mut builder = QpBuilder::new();
    let mut lower = vec![f64::NEG_INFINITY; n];
    let mut upper = vec![f64::INFINITY; n];
    for i in 0..n {
        // LPs need a box to stay bounded.
        if !curvature || rng.gen_bool(0.4) {
            lower[i] = x0[i] - rng.gen_range(0.1..2.0);
        }
        if !curvature || rng.gen_bool(0.4) {
            upper[i] = x0[i] + rng.gen_range(0.1..2.0);
        }
        builder.add_var(lower[i], upper[i]);
        builder.add_linear(i, q[i]);
    }
    for i in 0..n {
        for j in i..n {
            if p[(i, j)] != 0.0 {
                let c = if i == j { 0.5 * p[(i, i)] } else { p[(i, j)] };
                builder.add_quad_term(i, j, c);
            }
        }
    }
    for r in 0..me {
        let terms: Vec<(usize, f64)> = (0..n).map(|j| (j, a[(r, j)])).collect();
        builder.add_eq(&terms, bvec[r]);
    }
    for r in 0..mg {
        let terms: Vec<(usize, f64)> = (0..n).map(|j| (j, g[(r, j)])).collect();
        builder.add_le(&terms, h[r]);
    }

    let mut rows: Vec<(Vec<f64>, f64)> = (0..mg).map(|r| ((0..n).map(|j| g[(r, j)]).collect(), h[r])).collect();
    for i in 0..n {
        if lower[i].is_finite() {
            let mut row = vec![0.0; n];
            row[i] = -1.0;
            rows.push((row, -lower[i]));
        }
        if upper[i].is_finite() {
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            rows.push((row, upper[i]));
        }
    }
    let gall = DMatrix::from_fn(rows.len(), n, |r, c| rows[r].0[c]);
    let hall = DVector::from_fn(rows.len(), |r, _| rows[r].1);
    (
        builder.build(),
        Dense {
            p,
            q,
            a,
            b: bvec,
            g: gall,
            h: hall,
        },
    )
}

pub fn subsets(m: usize, max_size: usize) -> Vec<Vec<usize>> {
    (0u32..(1 << m))
        .filter(|mask| mask.count_ones() as usize <= max_size)
        .map(|mask| (0..m).filter(|&i| mask & (1 << i) != 0).collect())
        .collect()
}

/// Enumerates active sets of a strictly convex QP, returning the KKT point
/// that is primal and dual feasible.
pub fn active_set_oracle(d: &Dense) -> Option<(Vec<f64>, f64)> {
    let n = d.q.len();
    let me = d.b.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for set in subsets(d.h.len(), n - me) {
        let k = n + me + set.len();
        let mut kkt = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&d.p);
        for i in 0..n {
            rhs[i] = -d.q[i];
        }
        for r in 0..me {
            for j in 0..n {
                kkt[(n + r, j)] = d.a[(r, j)];
                kkt[(j, n + r)] = d.a[(r, j)];
            }
            rhs[n + r] = d.b[r];
        }
        for (s, &r) in set.iter().enumerate() {
            for j in 0..n {
                kkt[(n + me + s, j)] = d.g[(r, j)];
                kkt[(j, n + me + s)] = d.g[(r, j)];
            }
            rhs[n + me + s] = d.h[r];
        }
        let lu = kkt.clone().lu();
        let Some(sol) = lu.solve(&rhs) else { continue };
        if sol.iter().any(|v| !v.is_finite()) || (&kkt * &sol - &rhs).amax() > 1e-9 {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        let primal_ok = (&d.g * &x - &d.h).iter().all(|&v| v <= 1e-9);
        let dual_ok = (0..set.len()).all(|s| sol[n + me + s] >= -1e-9);
        if primal_ok && dual_ok {
            let obj = 0.5 * x.dot(&(&d.p * &x)) + d.q.dot(&x);
            if best.as_ref().map_or(true, |b| obj < b.1) {
                best = Some((x.iter().copied().collect(), obj));
            }
        }
    }
    best
}

/// Enumerates basic feasible solutions of a bounded LP and returns the best value.
pub fn vertex_oracle(d: &Dense) -> f64 {
    let n = d.q.len();
    let me = d.b.len();
    let m = d.h.len();
    let mut best = f64::INFINITY;
    for set in subsets(m, n - me) {
        if set.len() != n - me {
            continue;
        }
        let mut mat = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for r in 0..me {
            mat.row_mut(r).copy_from(&d.a.row(r));
            rhs[r] = d.b[r];
        }
        for (s, &r) in set.iter().enumerate() {
            mat.row_mut(me + s).copy_from(&d.g.row(r));
            rhs[me + s] = d.h[r];
        }
        let Some(x) = mat.clone().lu().solve(&rhs) else { continue };
        if (&mat * &x - &rhs).amax() > 1e-9 {
            continue;
        }
        if (&d.g * &x - &d.h).iter().all(|&v| v <= 1e-9) {
            best = best.min(d.q.dot(&x));
        }
    }
    best
}
