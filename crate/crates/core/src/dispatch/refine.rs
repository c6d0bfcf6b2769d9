//! Local improvement of a dispatch by projected gradient steps over the flows.

use super::gbd::{project_flows, Cut, FlowDomain};
use super::subproblem::{solve_at, SpOutcome};
use super::{flatten, unflatten, DispatchOptions, DispatchSolution};
use crate::error::Result;
use crate::model::DispatchInstance;

#[derive(Debug, Clone)]
pub struct RefineOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient step moves no flow by more than this, kg/s.
    pub tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub max_halvings: usize,
    pub dispatch: DispatchOptions,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            max_iter: 20,
            tol: 1e-6,
            armijo: 1e-4,
            max_halvings: 20,
            dispatch: DispatchOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub solution: DispatchSolution,
    pub iterations: usize,
    pub improved: bool,
    /// Infinity norm of the last projected gradient step at unit length.
    pub stationarity: f64,
    /// The start could not be re-evaluated or no step was accepted at all.
    pub line_search_failed: bool,
}

struct Point {
    m: Vec<f64>,
    value: f64,
    gradient: Vec<f64>,
    solution: DispatchSolution,
}

fn evaluate(instance: &DispatchInstance, m: &[f64], options: &DispatchOptions) -> Result<Option<Point>> {
    match solve_at(instance, &unflatten(m, instance.periods()), options)? {
        SpOutcome::Optimal { sub, qp, solution } => {
            let cut = Cut::from_subproblem(instance, 0, &sub, &qp);
            Ok(Some(Point {
                m: m.to_vec(),
                value: solution.objective.total,
                gradient: cut.gradient,
                solution,
            }))
        }
        SpOutcome::Infeasible { .. } => Ok(None),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Projected-gradient descent on the flow-to-cost map, where each cost
/// evaluation re-solves the dispatch QP. Only strict improvements are
/// accepted, so the result is never worse than `start`.
pub fn refine_local(instance: &DispatchInstance, start: &DispatchSolution, options: &RefineOptions) -> Result<RefineOutcome> {
    let domain = FlowDomain::new(instance);
    let unchanged = |failed: bool| RefineOutcome {
        solution: start.clone(),
        iterations: 0,
        improved: false,
        stationarity: f64::NAN,
        line_search_failed: failed,
    };
    let Some(mut current) = evaluate(instance, &flatten(&start.dhs.mass_flow), &options.dispatch)? else {
        log::warn!("refinement start is infeasible for the dispatch model; returning it unchanged");
        return Ok(unchanged(true));
    };
    current.value = current.value.min(start.objective.total);
    let width = (0..domain.len())
        .map(|i| domain.upper[i] - domain.lower[i])
        .fold(0.0_f64, f64::max);
    let mut iterations = 0;
    let mut improved = false;
    let mut stationarity = f64::INFINITY;
    for _ in 0..options.max_iter {
        iterations += 1;
        let g = &current.gradient;
        let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if gmax == 0.0 || width == 0.0 {
            stationarity = 0.0;
            break;
        }
        let unit: Vec<f64> = current.m.iter().zip(g).map(|(m, g)| m - g).collect();
        stationarity = max_abs_diff(&project_flows(&domain, &unit)?, &current.m);
        if stationarity <= options.tol {
            break;
        }
        let mut step = 0.5 * width / gmax;
        let mut accepted = None;
        for _ in 0..options.max_halvings {
            let target: Vec<f64> = current.m.iter().zip(g).map(|(m, g)| m - step * g).collect();
            let cand = project_flows(&domain, &target)?;
            if max_abs_diff(&cand, &current.m) <= options.tol {
                break;
            }
            let decrease: f64 = g.iter().zip(cand.iter().zip(&current.m)).map(|(g, (c, m))| g * (m - c)).sum();
            if let Some(p) = evaluate(instance, &cand, &options.dispatch)? {
                if p.value < current.value && p.value <= current.value - options.armijo * decrease {
                    accepted = Some(p);
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some(p) => {
                log::debug!("refine: {:.6} -> {:.6}", current.value, p.value);
                current = p;
                improved = true;
            }
            None => break,
        }
    }
    if !improved {
        let mut out = unchanged(false);
        out.iterations = iterations;
        out.stationarity = stationarity;
        return Ok(out);
    }
    Ok(RefineOutcome {
        solution: current.solution,
        iterations,
        improved,
        stationarity,
        line_search_failed: false,
    })
}
