use super::gbd::{gbd_solve, GbdOptions, GbdState};
use super::DispatchSolution;
use crate::error::Result;
use crate::hydraulics::PipeModel;
use crate::model::DispatchInstance;

/// Dispatch without transport delay: pipes lose heat at the constant-flow
/// rate for the current flow, and rooms are held at their lower bound.
pub fn solve_steady(instance: &DispatchInstance, options: &GbdOptions) -> Result<(DispatchSolution, GbdState)> {
    let mut opts = options.clone();
    opts.dispatch.model = PipeModel::Steady;
    opts.dispatch.fix_room_at_min = true;
    gbd_solve(instance, &opts)
}
