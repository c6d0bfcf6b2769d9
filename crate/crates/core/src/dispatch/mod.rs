//! Joint heat and power dispatch over a day-ahead horizon.
//!
//! Mass flows are the complicating variables: once they are fixed, every
//! remaining relation is affine and the dispatch is a convex QP. The outer
//! loop searches over flows with cuts built from the QP multipliers.

mod check;
mod gbd;
mod refine;
mod scenarios;
mod solution;
mod steady;
mod subproblem;

pub use check::{check_feasibility, FeasibilityReport};
pub use gbd::{
    gbd_solve, project_flows, solve_llp, solve_ulp, Cut, CutKind, FlowDomain, GbdOptions, GbdState, GbdStatus,
    TraceRow,
};
pub use refine::{refine_local, RefineOptions, RefineOutcome};
pub use scenarios::{run_scenarios, ScenarioPlan, ScenarioResult};
pub use solution::{
    BuildingSchedule, ChpSchedule, DhsSchedule, DispatchSolution, Objective, RenewableSchedule, ThermalSchedule,
};
pub use steady::solve_steady;
pub use subproblem::{build_feasibility_problem, build_subproblem, solve_at, Mutation, SpOutcome, Subproblem};

use hydrodispatch_qp::SolverOptions;

use crate::hydraulics::PipeModel;

/// Modelling switches shared by every subproblem of one run.
#[derive(Debug, Clone)]
pub struct DispatchOptions {
    pub model: PipeModel,
    /// Count pump electricity in the power balance and line flows.
    pub pump_load: bool,
    /// Pin room temperatures at their lower comfort bound.
    pub fix_room_at_min: bool,
    pub solver: SolverOptions,
    #[doc(hidden)]
    pub mutation: Option<Mutation>,
}

impl Default for DispatchOptions {
    fn default() -> Self {
        Self {
            model: PipeModel::Wmm,
            pump_load: false,
            fix_room_at_min: false,
            solver: SolverOptions::default(),
            mutation: None,
        }
    }
}

/// Flattened index of `m[pipe][period]`.
pub(crate) fn flow_index(periods: usize, pipe: usize, tau: usize) -> usize {
    pipe * periods + tau
}

pub(crate) fn flatten(flows: &[Vec<f64>]) -> Vec<f64> {
    flows.iter().flatten().copied().collect()
}

pub(crate) fn unflatten(m: &[f64], periods: usize) -> Vec<Vec<f64>> {
    m.chunks(periods).map(|c| c.to_vec()).collect()
}
