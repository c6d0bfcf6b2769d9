//! Pressure, pump, continuity and mixing relations of the heating network,
//! and period-by-period temperature propagation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DispatchInstance;
use crate::pipe::{self, PipeParams, WaterColumnWeights};

/// `(h_from − h_to) − k m² + h_pump`.
pub fn pressure_residual(h_from: f64, h_to: f64, resistance: f64, m: f64, pump_head: f64) -> f64 {
    (h_from - h_to) - resistance * m * m + pump_head
}

/// Electric power of a pump lifting `head` Pa at `m` kg/s, MW.
pub fn pump_power(m: f64, head: f64, rho: f64, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid("pump efficiency", format!("{eta} is outside (0, 1]")));
    }
    Ok(m * head / (rho * eta) * 1e-6)
}

/// `c Σ_out m t_n − c Σ_in m t_e − q_n`, W. `inflows` holds `(m, t_e)`.
pub fn mixing_residual(c: f64, inflows: &[(f64, f64)], outflow_mass: f64, t_node: f64, q_node: f64) -> f64 {
    let incoming: f64 = inflows.iter().map(|(m, t)| m * t).sum();
    c * outflow_mass * t_node - c * incoming - q_node
}

/// Incidence lists of the pipe graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub from: Vec<usize>,
    pub to: Vec<usize>,
    pub inflow: Vec<Vec<usize>>,
    pub outflow: Vec<Vec<usize>>,
}

impl Topology {
    pub fn new(instance: &DispatchInstance) -> Self {
        let dhs = &instance.dhs;
        let n = dhs.nodes.len();
        let mut inflow = vec![Vec::new(); n];
        let mut outflow = vec![Vec::new(); n];
        let mut from = Vec::new();
        let mut to = Vec::new();
        for (b, p) in dhs.pipelines.iter().enumerate() {
            let f = dhs.node_index(&p.from).expect("validated node");
            let t = dhs.node_index(&p.to).expect("validated node");
            from.push(f);
            to.push(t);
            outflow[f].push(b);
            inflow[t].push(b);
        }
        Self {
            from,
            to,
            inflow,
            outflow,
        }
    }

    pub fn nodes(&self) -> usize {
        self.inflow.len()
    }

    /// Mass used in a node's mixing balance: total outflow, or total inflow
    /// at a terminal node.
    pub fn mixing_mass(&self, node: usize, m: impl Fn(usize) -> f64) -> f64 {
        if self.outflow[node].is_empty() {
            self.inflow[node].iter().map(|&b| m(b)).sum()
        } else {
            self.outflow[node].iter().map(|&b| m(b)).sum()
        }
    }

    /// Connected components of the undirected pipe graph (node lists).
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.nodes();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut i = 0;
            while i < comp.len() {
                let v = comp[i];
                for &b in self.inflow[v].iter().chain(&self.outflow[v]) {
                    for u in [self.from[b], self.to[b]] {
                        if !seen[u] {
                            seen[u] = true;
                            comp.push(u);
                        }
                    }
                }
                i += 1;
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

/// Node pressures and pump heads, Pa, for one period of given flows.
///
/// Pressures and heads are only determined up to the pump settings, so this
/// picks the settings with the least `Σ h_pump²` that keep every node and pump
/// inside its bounds. Returns `None` when no such settings exist.
pub fn solve_pressures(instance: &DispatchInstance, flows: &[f64]) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    const BAR: f64 = 1e5;
    let topo = Topology::new(instance);
    let dhs = &instance.dhs;
    let mut qp = hydrodispatch_qp::QpBuilder::new();
    let h: Vec<usize> = dhs
        .nodes
        .iter()
        .map(|n| qp.add_var(n.pressure_bounds[0] / BAR, n.pressure_bounds[1] / BAR))
        .collect();
    let pumps: Vec<Option<usize>> = dhs
        .pipelines
        .iter()
        .map(|p| {
            p.pump.as_ref().map(|pump| {
                let v = qp.add_var(pump.head_bounds[0] / BAR, pump.head_bounds[1] / BAR);
                qp.add_quad_term(v, v, 1.0);
                v
            })
        })
        .collect();
    for (b, p) in dhs.pipelines.iter().enumerate() {
        let mut terms = vec![(h[topo.from[b]], 1.0), (h[topo.to[b]], -1.0)];
        if let Some(v) = pumps[b] {
            terms.push((v, 1.0));
        }
        qp.add_eq(&terms, p.resistance * flows[b] * flows[b] / BAR);
    }
    let sol = hydrodispatch_qp::solve_qp(&qp.build(), &hydrodispatch_qp::SolverOptions::default())?;
    if !sol.is_optimal() {
        return Ok(None);
    }
    let nodes = h.iter().map(|&i| sol.x[i] * BAR).collect();
    let heads = pumps.iter().map(|v| v.map_or(0.0, |i| sol.x[i] * BAR)).collect();
    Ok(Some((nodes, heads)))
}

/// Largest continuity violation `|Σ_in m − Σ_out m|` over nodes with both
/// inflow and outflow pipes.
pub fn continuity_residual(topology: &Topology, m: impl Fn(usize) -> f64) -> f64 {
    let mut worst = 0.0_f64;
    for n in 0..topology.nodes() {
        if topology.inflow[n].is_empty() || topology.outflow[n].is_empty() {
            continue;
        }
        let inflow: f64 = topology.inflow[n].iter().map(|&b| m(b)).sum();
        let outflow: f64 = topology.outflow[n].iter().map(|&b| m(b)).sum();
        worst = worst.max((inflow - outflow).abs());
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipeModel {
    /// Water-mass transport with history window.
    Wmm,
    /// Index-based transport, same water accounting.
    Nm,
    /// Instantaneous transport with steady heat loss.
    Steady,
}

/// Period-indexed mass flows and temperature history of every pipe.
#[derive(Debug, Clone, PartialEq)]
pub struct PipeWindow<'a> {
    pub instance: &'a DispatchInstance,
    /// `flows[pipe][period]` over the horizon.
    pub flows: &'a [Vec<f64>],
}

impl PipeWindow<'_> {
    pub fn flow(&self, pipe: usize, t: i64) -> f64 {
        if t < 0 {
            self.instance.dhs.pipelines[pipe].history_flow(t)
        } else {
            self.flows[pipe][t as usize]
        }
    }

    /// Flow window by lag for period `tau`.
    pub fn flow_window(&self, pipe: usize, tau: usize, depth: usize) -> Vec<f64> {
        (0..=depth).map(|k| self.flow(pipe, tau as i64 - k as i64)).collect()
    }
}

pub fn pipe_params(instance: &DispatchInstance) -> Vec<PipeParams> {
    instance
        .dhs
        .pipelines
        .iter()
        .map(|p| p.params(&instance.constants, instance.horizon.dt_seconds))
        .collect()
}

/// Fill weights of every pipe and period for the given horizon flows.
pub fn weights_for_flows(instance: &DispatchInstance, flows: &[Vec<f64>]) -> Result<Vec<Vec<WaterColumnWeights>>> {
    let params = pipe_params(instance);
    let window = PipeWindow { instance, flows };
    let mut out = Vec::with_capacity(params.len());
    for (b, p) in params.iter().enumerate() {
        let mut per = Vec::with_capacity(instance.periods());
        for tau in 0..instance.periods() {
            let w = pipe::fill_weights(p, &window.flow_window(b, tau, p.depth)).map_err(|source| Error::Fill {
                pipe: instance.dhs.pipelines[b].id.clone(),
                period: tau as i64,
                source,
            })?;
            per.push(w);
        }
        out.push(per);
    }
    Ok(out)
}

/// Temperature field of the network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkState {
    /// `t_node[node][period]`.
    pub t_node: Vec<Vec<f64>>,
    /// `t_lossless[pipe][period]`.
    pub t_lossless: Vec<Vec<f64>>,
    pub t_out: Vec<Vec<f64>>,
    pub transit: Vec<Vec<f64>>,
}

/// Propagates temperatures through the network.
///
/// `q_node[node][period]` is the heat injection in W. Within a period, nodes
/// are visited in an order where every pipe whose outflow depends on the
/// current inlet temperature is resolved after its upstream node. A closed
/// loop of such pipes is solved as one linear system; it fails only when that
/// system is singular.
pub fn propagate_network(
    instance: &DispatchInstance,
    flows: &[Vec<f64>],
    q_node: &[Vec<f64>],
    model: PipeModel,
) -> Result<NetworkState> {
    let topo = Topology::new(instance);
    let params = pipe_params(instance);
    let dhs = &instance.dhs;
    let c = instance.constants.c;
    let periods = instance.periods();
    let nb = dhs.pipelines.len();
    let nn = dhs.nodes.len();
    let window = PipeWindow { instance, flows };
    let mut state = NetworkState {
        t_node: vec![vec![f64::NAN; periods]; nn],
        t_lossless: vec![vec![f64::NAN; periods]; nb],
        t_out: vec![vec![f64::NAN; periods]; nb],
        transit: vec![vec![0.0; periods]; nb],
    };
    let inlet = |state: &NetworkState, b: usize, t: i64| -> f64 {
        if t < 0 {
            dhs.pipelines[b].history_temp(t)
        } else {
            state.t_node[topo.from[b]][t as usize]
        }
    };
    for tau in 0..periods {
        // Does pipe b's outlet depend on its inlet in this same period?
        let mut instant = vec![true; nb];
        if model != PipeModel::Steady {
            for b in 0..nb {
                let w = pipe::fill_weights(&params[b], &window.flow_window(b, tau, params[b].depth))
                    .map_err(|source| fill_error(instance, b, tau, source))?;
                instant[b] = w.alpha[0] < 1.0;
            }
        }
        // Outlet of pipe b for a given current inlet temperature.
        let outlet = |state: &NetworkState, b: usize, t_now: f64| -> Result<pipe::OutletResult> {
            let p = &params[b];
            let ambient = dhs.pipelines[b].ambient_c.at(tau);
            let r = match model {
                PipeModel::Steady => pipe::steady_outlet(p, flows[b][tau], t_now, ambient).map(|t_out| {
                    pipe::OutletResult {
                        t_lossless: t_now,
                        t_out,
                        transit: p.water_mass / flows[b][tau],
                    }
                }),
                PipeModel::Wmm | PipeModel::Nm => {
                    let fw = window.flow_window(b, tau, p.depth);
                    let mut temps = vec![t_now];
                    temps.extend((1..=p.depth).map(|k| inlet(state, b, tau as i64 - k as i64)));
                    if model == PipeModel::Wmm {
                        pipe::wmm_outlet(p, &fw, &temps, ambient)
                    } else {
                        pipe::nm_outlet(p, &fw, &temps, ambient)
                    }
                }
            };
            r.map_err(|source| fill_error(instance, b, tau, source))
        };
        let fixed_temp = |n: usize| -> Result<f64> {
            dhs.nodes[n]
                .supply_temp_c
                .as_ref()
                .map(|s| s.at(tau))
                .ok_or_else(|| Error::MissingSupplyTemp {
                    node: dhs.nodes[n].id.clone(),
                })
        };
        match instant_order(&topo, &instant) {
            Some(order) => {
                for n in order {
                    for &b in &topo.inflow[n] {
                        // A delayed pipe gives its current inlet zero weight, and that
                        // inlet may not be computed yet.
                        let t_now = if instant[b] { state.t_node[topo.from[b]][tau] } else { 0.0 };
                        let r = outlet(&state, b, t_now)?;
                        state.t_lossless[b][tau] = r.t_lossless;
                        state.t_out[b][tau] = r.t_out;
                        state.transit[b][tau] = r.transit;
                    }
                    state.t_node[n][tau] = if topo.inflow[n].is_empty() {
                        fixed_temp(n)?
                    } else {
                        let mass = topo.mixing_mass(n, |b| flows[b][tau]);
                        let incoming: f64 = topo.inflow[n].iter().map(|&b| flows[b][tau] * state.t_out[b][tau]).sum();
                        (c * incoming + q_node[n][tau]) / (c * mass)
                    };
                }
            }
            None => {
                // Outlets are affine in the current inlet temperature; solve
                // the coupled mixing balances of this period at once.
                let mut affine = Vec::with_capacity(nb);
                for b in 0..nb {
                    let r0 = outlet(&state, b, 0.0)?;
                    let r1 = outlet(&state, b, 1.0)?;
                    affine.push((r0, r1));
                }
                let mut a = nalgebra::DMatrix::<f64>::zeros(nn, nn);
                let mut rhs = nalgebra::DVector::<f64>::zeros(nn);
                for n in 0..nn {
                    if topo.inflow[n].is_empty() {
                        a[(n, n)] = 1.0;
                        rhs[n] = fixed_temp(n)?;
                        continue;
                    }
                    a[(n, n)] += c * topo.mixing_mass(n, |b| flows[b][tau]);
                    rhs[n] = q_node[n][tau];
                    for &b in &topo.inflow[n] {
                        let (r0, r1) = &affine[b];
                        let m = flows[b][tau];
                        a[(n, topo.from[b])] -= c * m * (r1.t_out - r0.t_out);
                        rhs[n] += c * m * r0.t_out;
                    }
                }
                let cycle = || Error::InstantCycle {
                    period: tau,
                    pipes: (0..nb).filter(|&b| instant[b]).map(|b| dhs.pipelines[b].id.clone()).collect(),
                };
                let scale = a.amax();
                if a.rank(1e-12 * scale) < nn {
                    return Err(cycle());
                }
                let t = a.lu().solve(&rhs).ok_or_else(cycle)?;
                if t.iter().any(|v| !v.is_finite()) {
                    return Err(cycle());
                }
                for n in 0..nn {
                    state.t_node[n][tau] = t[n];
                }
                for b in 0..nb {
                    let (r0, r1) = &affine[b];
                    let t_in = t[topo.from[b]];
                    state.t_lossless[b][tau] = r0.t_lossless + (r1.t_lossless - r0.t_lossless) * t_in;
                    state.t_out[b][tau] = r0.t_out + (r1.t_out - r0.t_out) * t_in;
                    state.transit[b][tau] = r0.transit;
                }
            }
        }
    }
    Ok(state)
}

fn fill_error(instance: &DispatchInstance, pipe: usize, period: usize, source: pipe::FillError) -> Error {
    Error::Fill {
        pipe: instance.dhs.pipelines[pipe].id.clone(),
        period: period as i64,
        source,
    }
}

/// Node visiting order for one period, or `None` on a cycle of pipes with
/// zero delay. Ties resolve to the lowest node index.
fn instant_order(topo: &Topology, instant: &[bool]) -> Option<Vec<usize>> {
    let n = topo.nodes();
    let mut indegree = vec![0usize; n];
    for (b, &inst) in instant.iter().enumerate() {
        if inst {
            indegree[topo.to[b]] += 1;
        }
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop_first() {
        order.push(v);
        for &b in &topo.outflow[v] {
            if instant[b] {
                let t = topo.to[b];
                indegree[t] -= 1;
                if indegree[t] == 0 {
                    ready.insert(t);
                }
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Energy bookkeeping of a propagated network over the horizon, J.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct HeatLedger {
    pub injected: f64,
    pub extracted: f64,
    pub pipe_losses: f64,
    /// Change in stored heat of the pipe water (inlet-temperature basis).
    pub storage_change: f64,
    /// Enthalpy carried in at nodes without inflow and out at nodes without outflow.
    pub boundary_net: f64,
}

impl HeatLedger {
    /// `injected − extracted + boundary_net − pipe_losses − storage_change`.
    pub fn imbalance(&self) -> f64 {
        self.injected - self.extracted + self.boundary_net - self.pipe_losses - self.storage_change
    }
}

/// Closes the energy balance of a WMM propagation.
pub fn heat_ledger(
    instance: &DispatchInstance,
    flows: &[Vec<f64>],
    q_node: &[Vec<f64>],
    state: &NetworkState,
) -> Result<HeatLedger> {
    let topo = Topology::new(instance);
    let params = pipe_params(instance);
    let c = instance.constants.c;
    let dt = instance.horizon.dt_seconds;
    let dhs = &instance.dhs;
    let window = PipeWindow { instance, flows };
    let mut ledger = HeatLedger::default();
    let inlet = |b: usize, t: i64| -> f64 {
        if t < 0 {
            dhs.pipelines[b].history_temp(t)
        } else {
            state.t_node[topo.from[b]][t as usize]
        }
    };
    // Stored heat at the end of period `tau` from the fill weights.
    let stored = |b: usize, tau: i64| -> Result<f64> {
        let p = &params[b];
        let fw: Vec<f64> = (0..=p.depth).map(|k| window.flow(b, tau - k as i64)).collect();
        let w = pipe::fill_weights(p, &fw).map_err(|source| Error::Fill {
            pipe: dhs.pipelines[b].id.clone(),
            period: tau,
            source,
        })?;
        Ok((0..=p.depth)
            .map(|k| w.alpha[k] * fw[k] * dt * c * inlet(b, tau - k as i64))
            .sum())
    };
    for tau in 0..instance.periods() {
        for n in 0..topo.nodes() {
            let q = q_node[n][tau] * dt;
            if q >= 0.0 {
                ledger.injected += q;
            } else {
                ledger.extracted -= q;
            }
            if topo.inflow[n].is_empty() {
                let m: f64 = topo.outflow[n].iter().map(|&b| flows[b][tau]).sum();
                ledger.boundary_net += c * m * state.t_node[n][tau] * dt;
            }
            if topo.outflow[n].is_empty() {
                let m: f64 = topo.inflow[n].iter().map(|&b| flows[b][tau]).sum();
                ledger.boundary_net -= c * m * state.t_node[n][tau] * dt;
            }
        }
        for b in 0..flows.len() {
            ledger.pipe_losses += c * flows[b][tau] * dt * (state.t_lossless[b][tau] - state.t_out[b][tau]);
        }
    }
    let last = instance.periods() as i64 - 1;
    for b in 0..flows.len() {
        ledger.storage_change += stored(b, last)? - stored(b, -1)?;
    }
    Ok(ledger)
}
