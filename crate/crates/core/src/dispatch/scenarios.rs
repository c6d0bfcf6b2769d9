//! Batches of dispatch runs over scaled wind availability and outdoor temperature.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use super::gbd::{gbd_solve, GbdOptions};
use super::refine::{refine_local, RefineOptions};
use crate::error::{Error, Result};
use crate::model::DispatchInstance;

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioPlan {
    /// Every combination of wind factor `u` and outdoor-temperature factor `v`.
    Grid { u: Vec<f64>, v: Vec<f64> },
    /// `count` wind factors drawn from N(1, 0.1²) truncated to [0.5, 1.5].
    MonteCarlo { count: usize, seed: u64 },
}

impl ScenarioPlan {
    /// `(u, v)` pairs in scenario order.
    pub fn factors(&self) -> Result<Vec<(f64, f64)>> {
        match self {
            ScenarioPlan::Grid { u, v } => Ok(u.iter().flat_map(|&a| v.iter().map(move |&b| (a, b))).collect()),
            ScenarioPlan::MonteCarlo { count, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let normal = Normal::new(1.0, 0.1).map_err(|e| Error::invalid("montecarlo", e.to_string()))?;
                let mut out = Vec::with_capacity(*count);
                while out.len() < *count {
                    let u: f64 = normal.sample(&mut rng);
                    if (0.5..=1.5).contains(&u) {
                        out.push((u, 1.0));
                    }
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub scenario: usize,
    pub u: f64,
    pub v: f64,
    pub converged: bool,
    pub iterations: usize,
    pub wall_ms: f64,
    pub cost: Option<f64>,
    /// Curtailed wind energy, MWh.
    pub curtailment: Option<f64>,
    pub error: Option<String>,
}

/// Copy of the instance with wind availability scaled by `u` and outdoor
/// temperatures (including their history) by `v`.
pub fn scaled_instance(instance: &DispatchInstance, u: f64, v: f64) -> DispatchInstance {
    let mut out = instance.clone();
    for r in &mut out.units.renewable {
        r.available_mw = r.available_mw.scaled(u);
    }
    for b in &mut out.dhs.buildings {
        b.outdoor_temp_c = b.outdoor_temp_c.scaled(v);
        if let Some(h) = &mut b.outdoor_history_c {
            h.iter_mut().for_each(|t| *t *= v);
        }
    }
    out
}

fn run_one(instance: &DispatchInstance, index: usize, u: f64, v: f64, options: &GbdOptions, refine: bool) -> ScenarioResult {
    let start = Instant::now();
    let scaled = scaled_instance(instance, u, v);
    let mut result = ScenarioResult {
        scenario: index,
        u,
        v,
        converged: false,
        iterations: 0,
        wall_ms: 0.0,
        cost: None,
        curtailment: None,
        error: None,
    };
    let outcome = gbd_solve(&scaled, options).and_then(|(sol, state)| {
        let sol = if refine {
            let ropts = RefineOptions {
                dispatch: options.dispatch.clone(),
                ..Default::default()
            };
            refine_local(&scaled, &sol, &ropts)?.solution
        } else {
            sol
        };
        Ok((sol, state))
    });
    match outcome {
        Ok((sol, state)) => {
            result.converged = state.converged();
            result.iterations = state.iterations;
            result.cost = Some(sol.objective.total);
            result.curtailment = Some(sol.total_curtailment_mwh(scaled.horizon.dt_hours()));
        }
        Err(e) => result.error = Some(e.to_string()),
    }
    result.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    result
}

/// Runs every scenario of the plan on `jobs` threads (0 = rayon default).
/// Results come back in scenario order; failures are recorded, not raised.
pub fn run_scenarios(
    instance: &DispatchInstance,
    plan: &ScenarioPlan,
    options: &GbdOptions,
    refine: bool,
    jobs: usize,
) -> Result<Vec<ScenarioResult>> {
    let factors = plan.factors()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid("jobs", e.to_string()))?;
    Ok(pool.install(|| {
        factors
            .par_iter()
            .enumerate()
            .map(|(i, &(u, v))| run_one(instance, i, u, v, options, refine))
            .collect()
    }))
}
