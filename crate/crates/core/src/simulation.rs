//! Forward simulation of pipelines and networks under scheduled flows.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hydraulics::{propagate_network, solve_pressures, NetworkState, PipeModel, PipeWindow};
use crate::model::DispatchInstance;
use crate::pipe;

/// One period of a single-pipe simulation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipeSimRow {
    pub period: i64,
    pub mass_flow_kg_s: f64,
    pub t_in_c: f64,
    pub t_out_wmm_c: f64,
    pub t_out_nm_c: f64,
    pub t_out_steady_c: f64,
    pub transit_wmm_s: f64,
    pub transit_nm_s: f64,
}

/// Scheduled flows of every pipe, `[pipe][period]`.
pub fn scheduled_flows(instance: &DispatchInstance) -> Result<Vec<Vec<f64>>> {
    instance
        .dhs
        .pipelines
        .iter()
        .map(|p| {
            let s = p
                .schedule
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("pipelines[{}].schedule", p.id), "missing"))?;
            Ok((0..instance.periods()).map(|t| s.mass_flow.at(t)).collect())
        })
        .collect()
}

/// Fixed node injections, W, `[node][period]`.
pub fn scheduled_injections(instance: &DispatchInstance) -> Vec<Vec<f64>> {
    instance
        .dhs
        .nodes
        .iter()
        .map(|n| {
            (0..instance.periods())
                .map(|t| n.heat_injection_mw.as_ref().map_or(0.0, |s| s.at(t)) * 1e6)
                .collect()
        })
        .collect()
}

/// Runs all three outlet models on one pipeline. Inlet temperatures come from
/// the pipe schedule, or the supply temperature of its upstream node.
pub fn simulate_pipe(instance: &DispatchInstance, pipe_id: &str) -> Result<Vec<PipeSimRow>> {
    let dhs = &instance.dhs;
    let b = dhs
        .pipe_index(pipe_id)
        .ok_or_else(|| Error::invalid("pipe", format!("unknown pipeline {pipe_id}")))?;
    let spec = &dhs.pipelines[b];
    let flows = scheduled_flows(instance)?;
    let from = &dhs.nodes[dhs.node_index(&spec.from).expect("validated node")];
    let inlet = spec
        .schedule
        .as_ref()
        .and_then(|s| s.inlet_temp.as_ref())
        .or(from.supply_temp_c.as_ref())
        .ok_or_else(|| Error::invalid(format!("pipelines[{pipe_id}]"), "no inlet temperature schedule or supply temperature"))?;
    let params = spec.params(&instance.constants, instance.horizon.dt_seconds);
    let window = PipeWindow { instance, flows: &flows };
    let temp = |t: i64| if t < 0 { spec.history_temp(t) } else { inlet.at(t as usize) };
    let fill = |tau: usize, source| Error::Fill {
        pipe: pipe_id.to_string(),
        period: tau as i64,
        source,
    };
    let mut rows = Vec::with_capacity(instance.periods());
    for tau in 0..instance.periods() {
        let fw = window.flow_window(b, tau, params.depth);
        let temps: Vec<f64> = (0..=params.depth).map(|k| temp(tau as i64 - k as i64)).collect();
        let ambient = spec.ambient_c.at(tau);
        let wmm = pipe::wmm_outlet(&params, &fw, &temps, ambient).map_err(|e| fill(tau, e))?;
        let nm = pipe::nm_outlet(&params, &fw, &temps, ambient).map_err(|e| fill(tau, e))?;
        let steady = pipe::steady_outlet(&params, fw[0], temps[0], ambient).map_err(|e| fill(tau, e))?;
        rows.push(PipeSimRow {
            period: instance.horizon.first_period + tau as i64,
            mass_flow_kg_s: fw[0],
            t_in_c: temps[0],
            t_out_wmm_c: wmm.t_out,
            t_out_nm_c: nm.t_out,
            t_out_steady_c: steady,
            transit_wmm_s: wmm.transit,
            transit_nm_s: nm.transit,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSimulation {
    pub flows: Vec<Vec<f64>>,
    pub state: NetworkState,
    /// `h_node[node][period]`, Pa; `None` where the pumps cannot deliver the flows.
    pub h_node: Vec<Vec<Option<f64>>>,
}

/// Propagates the scheduled flows and fixed injections through the network.
pub fn simulate_network(instance: &DispatchInstance, model: PipeModel) -> Result<NetworkSimulation> {
    let flows = scheduled_flows(instance)?;
    let q = scheduled_injections(instance);
    let state = propagate_network(instance, &flows, &q, model)?;
    let nn = instance.dhs.nodes.len();
    let mut h_node = vec![vec![None; instance.periods()]; nn];
    for tau in 0..instance.periods() {
        let m: Vec<f64> = flows.iter().map(|f| f[tau]).collect();
        if let Some((h, _)) = solve_pressures(instance, &m)? {
            for n in 0..nn {
                h_node[n][tau] = Some(h[n]);
            }
        } else {
            log::warn!("period {tau}: pump head bounds cannot deliver the scheduled flows");
        }
    }
    Ok(NetworkSimulation { flows, state, h_node })
}
