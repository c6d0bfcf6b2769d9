//! Decomposition over mass flows: the subproblem prices a flow point, the
//! master LP proposes the next one from accumulated cuts.

use std::time::Instant;

use hydrodispatch_qp::{solve_lp, solve_qp, QpBuilder, QpSolution, QpStatus};
use serde::{Deserialize, Serialize};

use super::subproblem::{solve_at, SpOutcome, Subproblem};
use super::{flatten, flow_index, unflatten, DispatchOptions, DispatchSolution};
use crate::error::{Error, Result};
use crate::hydraulics::{weights_for_flows, PipeModel, Topology};
use crate::model::DispatchInstance;
use crate::pipe::WaterColumnWeights;

/// Box bounds and node continuity over the flattened flows.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDomain {
    pub periods: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Rows `Σ coeff · m = 0`.
    pub continuity: Vec<Vec<(usize, f64)>>,
}

impl FlowDomain {
    pub fn new(instance: &DispatchInstance) -> Self {
        let periods = instance.periods();
        let topo = Topology::new(instance);
        let pipes = &instance.dhs.pipelines;
        let mut lower = Vec::with_capacity(pipes.len() * periods);
        let mut upper = Vec::with_capacity(pipes.len() * periods);
        for p in pipes {
            for _ in 0..periods {
                lower.push(p.mass_flow_bounds[0]);
                upper.push(p.mass_flow_bounds[1]);
            }
        }
        // A closed component repeats one node balance; drop its first node.
        let mut skip = vec![false; topo.nodes()];
        for comp in topo.components() {
            if comp.iter().all(|&n| !topo.inflow[n].is_empty() && !topo.outflow[n].is_empty()) {
                skip[comp[0]] = true;
            }
        }
        let mut continuity = Vec::new();
        for n in 0..topo.nodes() {
            if skip[n] || topo.inflow[n].is_empty() || topo.outflow[n].is_empty() {
                continue;
            }
            for tau in 0..periods {
                let mut row: Vec<(usize, f64)> = topo.inflow[n]
                    .iter()
                    .map(|&b| (flow_index(periods, b, tau), 1.0))
                    .collect();
                row.extend(topo.outflow[n].iter().map(|&b| (flow_index(periods, b, tau), -1.0)));
                if row.iter().all(|&(i, _)| lower[i] == upper[i]) {
                    continue;
                }
                continuity.push(row);
            }
        }
        Self {
            periods,
            lower,
            upper,
            continuity,
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Adds the flow variables and continuity rows; returns the variable indices.
    fn add_to(&self, qp: &mut QpBuilder) -> Vec<usize> {
        let vars: Vec<usize> = (0..self.len()).map(|i| qp.add_var(self.lower[i], self.upper[i])).collect();
        for row in &self.continuity {
            let terms: Vec<(usize, f64)> = row.iter().map(|&(i, c)| (vars[i], c)).collect();
            qp.add_eq(&terms, 0.0);
        }
        vars
    }

    /// Largest bound or continuity violation, kg/s.
    pub fn violation(&self, m: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.len() {
            worst = worst.max(self.lower[i] - m[i]).max(m[i] - self.upper[i]);
        }
        for row in &self.continuity {
            let s: f64 = row.iter().map(|&(i, c)| c * m[i]).sum();
            worst = worst.max(s.abs());
        }
        worst
    }
}

/// Euclidean projection onto the flow domain.
pub fn project_flows(domain: &FlowDomain, target: &[f64]) -> Result<Vec<f64>> {
    let mut qp = QpBuilder::new();
    let vars = domain.add_to(&mut qp);
    for (i, &v) in vars.iter().enumerate() {
        qp.add_quad_term(v, v, 1.0);
        qp.add_linear(v, -2.0 * target[i]);
    }
    let sol = solve_qp(&qp.build(), &Default::default())?;
    if sol.status != QpStatus::Optimal {
        return Err(Error::Decomposition(format!(
            "flow domain is empty (projection status {})",
            sol.status.as_str()
        )));
    }
    Ok(clamp_to_box(domain, vars.iter().map(|&v| sol.x[v]).collect()))
}

fn clamp_to_box(domain: &FlowDomain, mut m: Vec<f64>) -> Vec<f64> {
    for i in 0..m.len() {
        m[i] = m[i].clamp(domain.lower[i], domain.upper[i]);
    }
    m
}

/// Fill weights for fixed flows.
pub fn solve_ulp(instance: &DispatchInstance, flows: &[Vec<f64>]) -> Result<Vec<Vec<WaterColumnWeights>>> {
    weights_for_flows(instance, flows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutKind {
    Optimality,
    Feasibility,
}

/// Affine support `constant + gradientᵀ (m − point)` over the flattened flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub kind: CutKind,
    pub iteration: usize,
    pub point: Vec<f64>,
    pub constant: f64,
    pub gradient: Vec<f64>,
}

impl Cut {
    pub fn from_subproblem(instance: &DispatchInstance, iteration: usize, sub: &Subproblem, qp: &QpSolution) -> Self {
        let kind = if sub.feasibility { CutKind::Feasibility } else { CutKind::Optimality };
        Self {
            kind,
            iteration,
            point: flatten(&sub.flows),
            constant: qp.objective + sub.weighted_residual(&qp.x, &qp.eq_duals, &qp.ineq_duals),
            gradient: sub.flow_gradient(instance, qp),
        }
    }

    pub fn value(&self, m: &[f64]) -> f64 {
        self.constant
            + self
                .gradient
                .iter()
                .zip(m.iter().zip(&self.point))
                .map(|(g, (a, b))| g * (a - b))
                .sum::<f64>()
    }
}

/// Master LP: minimizes the cut model over the flow domain. Without
/// optimality cuts the objective is zero and the bound is `None`.
pub fn solve_llp(cuts: &[Cut], domain: &FlowDomain) -> Result<(Vec<f64>, Option<f64>)> {
    let mut qp = QpBuilder::new();
    let vars = domain.add_to(&mut qp);
    let has_opt = cuts.iter().any(|c| c.kind == CutKind::Optimality);
    let mu = has_opt.then(|| {
        let v = qp.add_free_var();
        qp.add_linear(v, 1.0);
        v
    });
    for cut in cuts {
        // constant − gᵀpoint + gᵀm ≤ μ  (or ≤ 0)
        let offset: f64 = cut.constant - cut.gradient.iter().zip(&cut.point).map(|(g, p)| g * p).sum::<f64>();
        let mut terms: Vec<(usize, f64)> = cut
            .gradient
            .iter()
            .enumerate()
            .filter(|(_, g)| **g != 0.0)
            .map(|(i, &g)| (vars[i], g))
            .collect();
        match (cut.kind, mu) {
            (CutKind::Optimality, Some(mu)) => {
                terms.push((mu, -1.0));
                qp.add_le(&terms, -offset);
            }
            _ => {
                qp.add_le(&terms, -offset);
            }
        }
    }
    let sol = solve_lp(&qp.build(), &Default::default())?;
    match sol.status {
        QpStatus::Optimal => {
            let m = clamp_to_box(domain, vars.iter().map(|&v| sol.x[v]).collect());
            Ok((m, mu.map(|v| sol.x[v])))
        }
        status => Err(Error::Decomposition(format!("master problem ended with status {}", status.as_str()))),
    }
}

#[derive(Debug, Clone)]
pub struct GbdOptions {
    pub epsilon: f64,
    pub max_iter: usize,
    /// Starting flows `[pipe][period]`; defaults to the steady-model solution
    /// for the transport model and to the projected box midpoint otherwise.
    pub m_init: Option<Vec<Vec<f64>>>,
    pub dispatch: DispatchOptions,
}

impl Default for GbdOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            max_iter: 100,
            m_init: None,
            dispatch: DispatchOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GbdStatus {
    Converged,
    IterationLimit,
    MasterInfeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub r: usize,
    pub ubd: Option<f64>,
    pub lbd: f64,
    pub sp_status: String,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdState {
    pub status: GbdStatus,
    pub iterations: usize,
    pub ubd: f64,
    pub lbd: f64,
    pub gap: f64,
    pub trace: Vec<TraceRow>,
    #[serde(skip)]
    pub cuts: Vec<Cut>,
}

impl GbdState {
    pub fn converged(&self) -> bool {
        self.status == GbdStatus::Converged
    }
}

fn relative_gap(ubd: f64, lbd: f64) -> f64 {
    let lbd = lbd.max(0.0);
    if ubd.abs() < 1e-9 {
        ubd - lbd
    } else {
        (ubd - lbd) / ubd.abs()
    }
}

pub fn gbd_solve(instance: &DispatchInstance, options: &GbdOptions) -> Result<(DispatchSolution, GbdState)> {
    let domain = FlowDomain::new(instance);
    let periods = instance.periods();
    let mut m = match &options.m_init {
        Some(init) => {
            if init.len() != instance.dhs.pipelines.len() || init.iter().any(|v| v.len() != periods) {
                return Err(Error::invalid("m_init", "shape must be pipes x periods"));
            }
            flatten(init)
        }
        None if options.dispatch.model == PipeModel::Wmm => {
            let mut steady = options.clone();
            steady.m_init = None;
            let (sol, _) = super::steady::solve_steady(instance, &steady)?;
            flatten(&sol.dhs.mass_flow)
        }
        None => {
            let mid: Vec<f64> = (0..domain.len()).map(|i| 0.5 * (domain.lower[i] + domain.upper[i])).collect();
            project_flows(&domain, &mid)?
        }
    };
    let mut cuts: Vec<Cut> = Vec::new();
    let mut trace = Vec::new();
    let mut ubd = f64::INFINITY;
    let mut lbd = f64::NEG_INFINITY;
    let mut incumbent: Option<DispatchSolution> = None;
    let mut status = GbdStatus::IterationLimit;
    let mut iterations = 0;
    for r in 1..=options.max_iter {
        iterations = r;
        let start = Instant::now();
        let flows = unflatten(&m, periods);
        let sp_status = match solve_at(instance, &flows, &options.dispatch)? {
            SpOutcome::Optimal { sub, qp, solution } => {
                if qp.objective < ubd {
                    ubd = qp.objective;
                    incumbent = Some(solution);
                }
                cuts.push(Cut::from_subproblem(instance, r, &sub, &qp));
                "optimal"
            }
            SpOutcome::Infeasible { sub, qp } => {
                cuts.push(Cut::from_subproblem(instance, r, &sub, &qp));
                "infeasible"
            }
        };
        let master = solve_llp(&cuts, &domain);
        let mut row = TraceRow {
            r,
            ubd: ubd.is_finite().then_some(ubd),
            lbd: if lbd.is_finite() { lbd } else { 0.0 },
            sp_status: sp_status.to_string(),
            wall_ms: 0.0,
        };
        let next = match master {
            Ok((next, bound)) => {
                if let Some(b) = bound {
                    lbd = lbd.max(b);
                    row.lbd = lbd;
                }
                Some(next)
            }
            Err(e) => {
                log::warn!("iteration {r}: {e}");
                status = GbdStatus::MasterInfeasible;
                None
            }
        };
        row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        log::debug!(
            "iteration {r}: sp {sp_status}, ubd {:?}, lbd {}, {:.1} ms",
            row.ubd,
            row.lbd,
            row.wall_ms
        );
        trace.push(row);
        let Some(next) = next else { break };
        if incumbent.is_some() && relative_gap(ubd, lbd) < options.epsilon {
            status = GbdStatus::Converged;
            break;
        }
        m = next;
    }
    let solution = incumbent.ok_or_else(|| {
        Error::Decomposition(format!("no feasible flow point found in {iterations} iterations"))
    })?;
    let lbd_out = if lbd.is_finite() { lbd } else { 0.0 };
    let state = GbdState {
        status,
        iterations,
        ubd,
        lbd: lbd_out,
        gap: relative_gap(ubd, lbd_out),
        trace,
        cuts,
    };
    Ok((solution, state))
}
