//! Dispatch QP for fixed mass flows, and its slack-relaxed feasibility twin.

use hydrodispatch_qp::{solve_qp, QpBuilder, QpProblem, QpSolution, QpStatus};

use super::solution::{
    evaluate_objective, BuildingSchedule, ChpSchedule, DhsSchedule, DispatchSolution, RenewableSchedule,
    ThermalSchedule,
};
use super::DispatchOptions;
use crate::building::{assemble_building_constraints, BuildingConstraints};
use crate::error::{Error, Result};
use crate::hydraulics::{pipe_params, weights_for_flows, PipeModel, PipeWindow, Topology};
use crate::model::DispatchInstance;
use crate::pipe::{self, PipeParams, WaterColumnWeights};

/// Pressures and heads enter the QP in bar.
const BAR: f64 = 1e5;

/// Deliberate assembly faults, used to show that the independent checker
/// notices when the optimization model drifts from the physics.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    /// Pipe outlets ignore heat loss.
    DropHeatLoss,
    /// Building heat is counted twice at its network node.
    DoubleBuildingHeat,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Layout {
    pub chp_zeta: Vec<Vec<Vec<usize>>>,
    pub chp_p: Vec<Vec<usize>>,
    pub chp_q: Vec<Vec<usize>>,
    pub th_p: Vec<Vec<usize>>,
    pub th_ru: Vec<Vec<usize>>,
    pub th_rd: Vec<Vec<usize>>,
    pub re_p: Vec<Vec<usize>>,
    pub t_node: Vec<Vec<usize>>,
    pub h_node: Vec<Vec<usize>>,
    pub head: Vec<Option<Vec<usize>>>,
    pub t_lossless: Vec<Vec<usize>>,
    pub t_out: Vec<Vec<usize>>,
    pub buildings: Vec<(usize, BuildingConstraints)>,
}

/// Rows whose coefficients or right-hand sides depend on the mass flows.
#[derive(Debug, Clone, Default)]
pub(crate) struct RowMap {
    pub balance: Vec<usize>,
    /// `(upper, lower)` inequality rows per line and period.
    pub lines: Vec<Vec<(usize, usize)>>,
    pub pressure: Vec<Vec<usize>>,
    pub mixing: Vec<Vec<Option<usize>>>,
    pub lossless: Vec<Vec<usize>>,
    pub decay: Vec<Vec<usize>>,
}

/// An assembled dispatch QP together with the bookkeeping needed to turn its
/// multipliers into cut coefficients.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub problem: QpProblem,
    /// Built as the slack-minimizing feasibility LP.
    pub feasibility: bool,
    pub(crate) layout: Layout,
    pub(crate) rows: RowMap,
    pub(crate) flows: Vec<Vec<f64>>,
    pub(crate) weights: Vec<Vec<WaterColumnWeights>>,
    pub(crate) params: Vec<PipeParams>,
    pub(crate) options: DispatchOptions,
}

pub fn build_subproblem(instance: &DispatchInstance, flows: &[Vec<f64>], options: &DispatchOptions) -> Result<Subproblem> {
    assemble(instance, flows, options, false)
}

/// Same constraints with every mixing balance relaxed by a slack pair; the
/// objective is the total slack.
pub fn build_feasibility_problem(
    instance: &DispatchInstance,
    flows: &[Vec<f64>],
    options: &DispatchOptions,
) -> Result<Subproblem> {
    assemble(instance, flows, options, true)
}

fn check_flows(instance: &DispatchInstance, flows: &[Vec<f64>]) -> Result<()> {
    let nb = instance.dhs.pipelines.len();
    if flows.len() != nb || flows.iter().any(|f| f.len() != instance.periods()) {
        return Err(Error::invalid("mass flows", format!("expected {nb} pipes x {} periods", instance.periods())));
    }
    Ok(())
}

fn ramp_rows(qp: &mut QpBuilder, vars: &[usize], initial: Option<f64>, [down, up]: [f64; 2], dt_h: f64) {
    for tau in 0..vars.len() {
        let x = vars[tau];
        if tau == 0 {
            if let Some(x0) = initial {
                qp.add_le(&[(x, 1.0)], x0 + up * dt_h);
                qp.add_le(&[(x, -1.0)], down * dt_h - x0);
            }
            continue;
        }
        let prev = vars[tau - 1];
        qp.add_le(&[(x, 1.0), (prev, -1.0)], up * dt_h);
        qp.add_le(&[(prev, 1.0), (x, -1.0)], down * dt_h);
    }
}

/// `m H / (ρ η)` in MW for a head in bar.
fn pump_coeff(m: f64, rho: f64, eta: f64) -> f64 {
    m * BAR / (rho * eta) * 1e-6
}

fn assemble(instance: &DispatchInstance, flows: &[Vec<f64>], options: &DispatchOptions, relax: bool) -> Result<Subproblem> {
    check_flows(instance, flows)?;
    let periods = instance.periods();
    let dt_h = instance.horizon.dt_hours();
    let consts = &instance.constants;
    let c_mw = consts.c * 1e-6;
    let dhs = &instance.dhs;
    let grid = &instance.grid;
    let topo = Topology::new(instance);
    let params = pipe_params(instance);
    let weights = match options.model {
        PipeModel::Wmm => weights_for_flows(instance, flows)?,
        PipeModel::Steady => Vec::new(),
        PipeModel::Nm => {
            return Err(Error::invalid("method", "the node method is available for simulation only"));
        }
    };
    for u in &instance.units.chp {
        let n = dhs.node_index(&u.dhs_node).expect("validated node");
        if topo.inflow[n].is_empty() {
            return Err(Error::invalid(
                format!("units.chp[{}]", u.id),
                "the CHP node needs an inflow pipe to carry its heat",
            ));
        }
    }
    if instance.units.thermal.is_empty()
        && (0..periods).any(|t| grid.reserve.up_mw.at(t) > 0.0 || grid.reserve.down_mw.at(t) > 0.0)
    {
        return Err(Error::invalid("grid.reserve", "reserve requirement without non-CHP units"));
    }

    let mut qp = QpBuilder::new();
    let mut lay = Layout::default();
    let mut rows = RowMap::default();
    let cost = !relax;

    for u in &instance.units.chp {
        let mut zeta = Vec::with_capacity(periods);
        let mut ps = Vec::with_capacity(periods);
        let mut qs = Vec::with_capacity(periods);
        for _ in 0..periods {
            let z: Vec<usize> = u.vertices.iter().map(|_| qp.add_var(0.0, 1.0)).collect();
            let p = qp.add_free_var();
            let q = qp.add_free_var();
            let mut tp = vec![(p, 1.0)];
            let mut tq = vec![(q, 1.0)];
            for (k, v) in u.vertices.iter().enumerate() {
                tp.push((z[k], -v[0]));
                tq.push((z[k], -v[1]));
            }
            qp.add_eq(&tp, 0.0);
            qp.add_eq(&tq, 0.0);
            let ones: Vec<(usize, f64)> = z.iter().map(|&v| (v, 1.0)).collect();
            qp.add_eq(&ones, 1.0);
            if cost {
                let [a0, a1, a2, a3, a4, a5] = u.cost;
                qp.add_constant(dt_h * a0);
                qp.add_linear(p, dt_h * a1);
                qp.add_linear(q, dt_h * a2);
                qp.add_quad_term(p, p, dt_h * a3);
                qp.add_quad_term(q, q, dt_h * a4);
                qp.add_quad_term(p, q, dt_h * a5);
            }
            zeta.push(z);
            ps.push(p);
            qs.push(q);
        }
        ramp_rows(&mut qp, &ps, u.initial_p, u.ramp_p_mw_h, dt_h);
        ramp_rows(&mut qp, &qs, u.initial_q, u.ramp_q_mw_h, dt_h);
        lay.chp_zeta.push(zeta);
        lay.chp_p.push(ps);
        lay.chp_q.push(qs);
    }

    for u in &instance.units.thermal {
        let [down, up] = u.ramp_mw_h;
        let mut ps = Vec::with_capacity(periods);
        let mut rus = Vec::with_capacity(periods);
        let mut rds = Vec::with_capacity(periods);
        for _ in 0..periods {
            let p = qp.add_var(u.p_min, u.p_max);
            let ru = qp.add_var(0.0, up * dt_h);
            let rd = qp.add_var(0.0, down * dt_h);
            qp.add_le(&[(p, 1.0), (ru, 1.0)], u.p_max);
            qp.add_le(&[(p, -1.0), (rd, 1.0)], -u.p_min);
            if cost {
                let [d0, d1, d2] = u.cost;
                qp.add_constant(dt_h * d0);
                qp.add_linear(p, dt_h * d1);
                qp.add_quad_term(p, p, dt_h * d2);
            }
            ps.push(p);
            rus.push(ru);
            rds.push(rd);
        }
        ramp_rows(&mut qp, &ps, u.initial_p, u.ramp_mw_h, dt_h);
        lay.th_p.push(ps);
        lay.th_ru.push(rus);
        lay.th_rd.push(rds);
    }
    if !instance.units.thermal.is_empty() {
        for tau in 0..periods {
            let up: Vec<(usize, f64)> = lay.th_ru.iter().map(|v| (v[tau], -1.0)).collect();
            qp.add_le(&up, -grid.reserve.up_mw.at(tau));
            let down: Vec<(usize, f64)> = lay.th_rd.iter().map(|v| (v[tau], -1.0)).collect();
            qp.add_le(&down, -grid.reserve.down_mw.at(tau));
        }
    }

    for u in &instance.units.renewable {
        let mut ps = Vec::with_capacity(periods);
        for tau in 0..periods {
            let avail = u.available_mw.at(tau);
            let p = qp.add_var(0.0, avail);
            if cost {
                let k = dt_h * u.penalty;
                qp.add_constant(k * avail * avail);
                qp.add_linear(p, -2.0 * k * avail);
                qp.add_quad_term(p, p, k);
            }
            ps.push(p);
        }
        lay.re_p.push(ps);
    }

    for (n, node) in dhs.nodes.iter().enumerate() {
        let mut ts = Vec::with_capacity(periods);
        let mut hs = Vec::with_capacity(periods);
        for tau in 0..periods {
            let t = if topo.inflow[n].is_empty() {
                let supply = node.supply_temp_c.as_ref().ok_or_else(|| Error::MissingSupplyTemp {
                    node: node.id.clone(),
                })?;
                let v = supply.at(tau);
                qp.add_var(v, v)
            } else {
                qp.add_var(node.temp_bounds[0], node.temp_bounds[1])
            };
            ts.push(t);
            hs.push(qp.add_var(node.pressure_bounds[0] / BAR, node.pressure_bounds[1] / BAR));
        }
        lay.t_node.push(ts);
        lay.h_node.push(hs);
    }
    for p in &dhs.pipelines {
        lay.head.push(p.pump.as_ref().map(|pump| {
            (0..periods)
                .map(|_| qp.add_var(pump.head_bounds[0] / BAR, pump.head_bounds[1] / BAR))
                .collect()
        }));
        lay.t_lossless.push((0..periods).map(|_| qp.add_free_var()).collect());
        lay.t_out.push((0..periods).map(|_| qp.add_free_var()).collect());
    }

    for spec in &dhs.buildings {
        let cons = assemble_building_constraints(spec, consts, &instance.horizon);
        let offset = qp.num_vars();
        let stride = cons.walls + 2;
        for local in 0..cons.num_vars() {
            let tau = local / stride;
            let slot = local % stride;
            let (lo, hi) = if slot < cons.walls {
                (f64::NEG_INFINITY, f64::INFINITY)
            } else if slot == cons.walls {
                let lo = spec.room_temp_min.at(tau);
                let hi = if options.fix_room_at_min { lo } else { spec.room_temp_max.at(tau) };
                (lo, hi)
            } else {
                (0.0, f64::INFINITY)
            };
            qp.add_var(lo, hi);
        }
        for row in &cons.equalities {
            let terms: Vec<(usize, f64)> = row.terms.iter().map(|&(v, c)| (offset + v, c)).collect();
            qp.add_eq(&terms, row.rhs);
        }
        lay.buildings.push((offset, cons));
    }

    // Pump loads by bus: (head var, MW per bar).
    let pump_loads = |tau: usize| -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        if !options.pump_load {
            return out;
        }
        for (b, p) in dhs.pipelines.iter().enumerate() {
            if let (Some(pump), Some(heads)) = (&p.pump, &lay.head[b]) {
                if let Some(bus) = pump.bus.as_deref().and_then(|id| grid.bus_index(id)) {
                    out.push((bus, heads[tau], pump_coeff(flows[b][tau], consts.rho, pump.efficiency)));
                }
            }
        }
        out
    };
    let bus_of = |id: &str| grid.bus_index(id).expect("validated bus");
    for tau in 0..periods {
        let mut injections: Vec<(usize, usize, f64)> = Vec::new();
        for (i, u) in instance.units.chp.iter().enumerate() {
            injections.push((bus_of(&u.bus), lay.chp_p[i][tau], 1.0));
        }
        for (i, u) in instance.units.thermal.iter().enumerate() {
            injections.push((bus_of(&u.bus), lay.th_p[i][tau], 1.0));
        }
        for (i, u) in instance.units.renewable.iter().enumerate() {
            injections.push((bus_of(&u.bus), lay.re_p[i][tau], 1.0));
        }
        for (bus, var, coeff) in pump_loads(tau) {
            injections.push((bus, var, -coeff));
        }
        let terms: Vec<(usize, f64)> = injections.iter().map(|&(_, v, c)| (v, c)).collect();
        rows.balance.push(qp.add_eq(&terms, grid.total_demand(tau)));
    }
    for line in &grid.lines {
        let mut per = Vec::with_capacity(periods);
        for tau in 0..periods {
            let mut terms = Vec::new();
            let add = |terms: &mut Vec<(usize, f64)>, bus: usize, var: usize, c: f64| {
                let k = line.shift_factors[bus];
                if k != 0.0 {
                    terms.push((var, k * c));
                }
            };
            for (i, u) in instance.units.chp.iter().enumerate() {
                add(&mut terms, bus_of(&u.bus), lay.chp_p[i][tau], 1.0);
            }
            for (i, u) in instance.units.thermal.iter().enumerate() {
                add(&mut terms, bus_of(&u.bus), lay.th_p[i][tau], 1.0);
            }
            for (i, u) in instance.units.renewable.iter().enumerate() {
                add(&mut terms, bus_of(&u.bus), lay.re_p[i][tau], 1.0);
            }
            for (bus, var, coeff) in pump_loads(tau) {
                add(&mut terms, bus, var, -coeff);
            }
            let demand_flow: f64 = grid
                .demand
                .iter()
                .map(|d| line.shift_factors[bus_of(&d.bus)] * d.mw.at(tau))
                .sum();
            let upper = qp.add_le(&terms, line.capacity_mw + demand_flow);
            let neg: Vec<(usize, f64)> = terms.iter().map(|&(v, c)| (v, -c)).collect();
            let lower = qp.add_le(&neg, line.capacity_mw - demand_flow);
            per.push((upper, lower));
        }
        rows.lines.push(per);
    }

    for (b, p) in dhs.pipelines.iter().enumerate() {
        let (f, t) = (topo.from[b], topo.to[b]);
        let mut per = Vec::with_capacity(periods);
        for tau in 0..periods {
            let mut terms = vec![(lay.h_node[f][tau], 1.0), (lay.h_node[t][tau], -1.0)];
            if let Some(heads) = &lay.head[b] {
                terms.push((heads[tau], 1.0));
            }
            let m = flows[b][tau];
            per.push(qp.add_eq(&terms, p.resistance * m * m / BAR));
        }
        rows.pressure.push(per);
    }

    let building_factor = if options.mutation == Some(Mutation::DoubleBuildingHeat) { 2.0 } else { 1.0 };
    for (n, node) in dhs.nodes.iter().enumerate() {
        let mut per = Vec::with_capacity(periods);
        for tau in 0..periods {
            if topo.inflow[n].is_empty() {
                per.push(None);
                continue;
            }
            let mass = topo.mixing_mass(n, |b| flows[b][tau]);
            let mut terms = vec![(lay.t_node[n][tau], c_mw * mass)];
            for &b in &topo.inflow[n] {
                terms.push((lay.t_out[b][tau], -c_mw * flows[b][tau]));
            }
            for (i, u) in instance.units.chp.iter().enumerate() {
                if u.dhs_node == node.id {
                    terms.push((lay.chp_q[i][tau], -1.0));
                }
            }
            for (spec, (offset, cons)) in dhs.buildings.iter().zip(&lay.buildings) {
                if spec.dhs_node == node.id {
                    terms.push((offset + cons.heat_var(tau), building_factor * spec.room_count * 1e-6));
                }
            }
            if relax {
                let plus = qp.add_var(0.0, f64::INFINITY);
                let minus = qp.add_var(0.0, f64::INFINITY);
                qp.add_linear(plus, 1.0);
                qp.add_linear(minus, 1.0);
                terms.push((plus, 1.0));
                terms.push((minus, -1.0));
            }
            per.push(Some(qp.add_eq(&terms, 0.0)));
        }
        rows.mixing.push(per);
    }

    let window = PipeWindow { instance, flows };
    for (b, spec) in dhs.pipelines.iter().enumerate() {
        let from = topo.from[b];
        let scale = spec.mass_flow_bounds[1].max(1.0);
        let mut lossless = Vec::with_capacity(periods);
        let mut decay = Vec::with_capacity(periods);
        for tau in 0..periods {
            let tl = lay.t_lossless[b][tau];
            let te = lay.t_out[b][tau];
            let ambient = spec.ambient_c.at(tau);
            let factor = match options.model {
                PipeModel::Wmm => {
                    let w = &weights[b][tau];
                    let fw = window.flow_window(b, tau, params[b].depth);
                    let mut terms = vec![(tl, fw[0] / scale)];
                    let mut rhs = 0.0;
                    for k in 0..fw.len() {
                        let coeff = (w.beta[k] - w.alpha[k]) * fw[k] / scale;
                        if coeff == 0.0 {
                            continue;
                        }
                        let t = tau as i64 - k as i64;
                        if t >= 0 {
                            terms.push((lay.t_node[from][t as usize], -coeff));
                        } else {
                            rhs += coeff * spec.history_temp(t);
                        }
                    }
                    lossless.push(qp.add_eq(&terms, rhs));
                    (-params[b].decay_rate * w.transit(params[b].dt)).exp()
                }
                _ => {
                    lossless.push(qp.add_eq(&[(tl, 1.0), (lay.t_node[from][tau], -1.0)], 0.0));
                    pipe::steady_factor(&params[b], flows[b][tau]).0
                }
            };
            let factor = if options.mutation == Some(Mutation::DropHeatLoss) { 1.0 } else { factor };
            decay.push(qp.add_eq(&[(te, 1.0), (tl, -factor)], ambient * (1.0 - factor)));
        }
        rows.lossless.push(lossless);
        rows.decay.push(decay);
    }

    Ok(Subproblem {
        problem: qp.build(),
        feasibility: relax,
        layout: lay,
        rows,
        flows: flows.to_vec(),
        weights,
        params,
        options: options.clone(),
    })
}

impl Subproblem {
    /// `Σ y (A x − b) + Σ z (G x − h)` at the given point.
    pub fn weighted_residual(&self, x: &[f64], eq_duals: &[f64], ineq_duals: &[f64]) -> f64 {
        let p = &self.problem;
        let ax = p.eq.mul_vec(x);
        let gx = p.ineq.mul_vec(x);
        let eq: f64 = (0..ax.len()).map(|i| eq_duals[i] * (ax[i] - p.eq_rhs[i])).sum();
        let ineq: f64 = (0..gx.len()).map(|i| ineq_duals[i] * (gx[i] - p.ineq_rhs[i])).sum();
        eq + ineq
    }

    /// Gradient over the flattened flows of `Σ multipliers · row residual`,
    /// holding `x` fixed and letting the fill weights follow the flows.
    pub fn flow_gradient(&self, instance: &DispatchInstance, sol: &QpSolution) -> Vec<f64> {
        let periods = instance.periods();
        let x = &sol.x;
        let y = &sol.eq_duals;
        let z = &sol.ineq_duals;
        let consts = &instance.constants;
        let c_mw = consts.c * 1e-6;
        let dhs = &instance.dhs;
        let topo = Topology::new(instance);
        let lay = &self.layout;
        let flows = &self.flows;
        let mut g = vec![0.0; dhs.pipelines.len() * periods];
        let idx = |b: usize, tau: usize| super::flow_index(periods, b, tau);

        if self.options.pump_load {
            for (b, p) in dhs.pipelines.iter().enumerate() {
                let (Some(pump), Some(heads)) = (&p.pump, &lay.head[b]) else { continue };
                let Some(bus) = pump.bus.as_deref().and_then(|id| instance.grid.bus_index(id)) else { continue };
                for tau in 0..periods {
                    let d = -pump_coeff(1.0, consts.rho, pump.efficiency) * x[heads[tau]];
                    let mut acc = y[self.rows.balance[tau]] * d;
                    for (l, line) in instance.grid.lines.iter().enumerate() {
                        let (up, lo) = self.rows.lines[l][tau];
                        let k = line.shift_factors[bus];
                        acc += (z[up] - z[lo]) * k * d;
                    }
                    g[idx(b, tau)] += acc;
                }
            }
        }
        for (b, p) in dhs.pipelines.iter().enumerate() {
            for tau in 0..periods {
                g[idx(b, tau)] += y[self.rows.pressure[b][tau]] * (-2.0 * p.resistance * flows[b][tau] / BAR);
            }
        }
        for n in 0..dhs.nodes.len() {
            let mass_pipes: &[usize] = if topo.outflow[n].is_empty() { &topo.inflow[n] } else { &topo.outflow[n] };
            for tau in 0..periods {
                let Some(r) = self.rows.mixing[n][tau] else { continue };
                let t_n = x[lay.t_node[n][tau]];
                for &b in mass_pipes {
                    g[idx(b, tau)] += y[r] * c_mw * t_n;
                }
                for &b in &topo.inflow[n] {
                    g[idx(b, tau)] -= y[r] * c_mw * x[lay.t_out[b][tau]];
                }
            }
        }
        let window = PipeWindow { instance, flows };
        let lossy = self.options.mutation != Some(Mutation::DropHeatLoss);
        for (b, spec) in dhs.pipelines.iter().enumerate() {
            let from = topo.from[b];
            let params = &self.params[b];
            let scale = spec.mass_flow_bounds[1].max(1.0);
            for tau in 0..periods {
                let t_l = x[lay.t_lossless[b][tau]];
                let ambient = spec.ambient_c.at(tau);
                let y_loss = y[self.rows.lossless[b][tau]];
                let y_decay = y[self.rows.decay[b][tau]];
                match self.options.model {
                    PipeModel::Wmm => {
                        let w = &self.weights[b][tau];
                        let fw = window.flow_window(b, tau, params.depth);
                        let temp = |k: usize| {
                            let t = tau as i64 - k as i64;
                            if t >= 0 {
                                x[lay.t_node[from][t as usize]]
                            } else {
                                spec.history_temp(t)
                            }
                        };
                        let sens = pipe::weight_sensitivity(&fw, w);
                        let front_term = |front: Option<usize>, grad: &[f64], j: usize| {
                            front.map_or(0.0, |f| grad[j] * fw[f] * temp(f))
                        };
                        let factor = (-params.decay_rate * w.transit(params.dt)).exp();
                        for j in 0..=params.depth.min(tau) {
                            let mut d_loss = -(w.beta[j] - w.alpha[j]) * temp(j);
                            if j == 0 {
                                d_loss += t_l;
                            }
                            d_loss -= front_term(sens.beta_front, &sens.beta_grad, j)
                                - front_term(sens.alpha_front, &sens.alpha_grad, j);
                            let mut acc = y_loss * d_loss / scale;
                            if lossy {
                                let d_factor = -factor * params.decay_rate * 0.5 * params.dt
                                    * (sens.alpha_grad[j] + sens.beta_grad[j]);
                                acc += y_decay * (-(t_l - ambient) * d_factor);
                            }
                            g[idx(b, tau - j)] += acc;
                        }
                    }
                    _ => {
                        if lossy {
                            let (_, d_factor) = pipe::steady_factor(params, flows[b][tau]);
                            g[idx(b, tau)] += y_decay * (-(t_l - ambient) * d_factor);
                        }
                    }
                }
            }
        }
        g
    }

    /// Reads the schedules out of a QP solution.
    pub fn extract(&self, instance: &DispatchInstance, sol: &QpSolution) -> DispatchSolution {
        let x = &sol.x;
        let periods = instance.periods();
        let lay = &self.layout;
        let dhs = &instance.dhs;
        let consts = &instance.constants;
        let read = |vars: &[usize]| -> Vec<f64> { vars.iter().map(|&v| x[v]).collect() };
        let chp = instance
            .units
            .chp
            .iter()
            .enumerate()
            .map(|(i, u)| ChpSchedule {
                id: u.id.clone(),
                p_mw: read(&lay.chp_p[i]),
                q_mw: read(&lay.chp_q[i]),
                zeta: lay.chp_zeta[i].iter().map(|z| read(z)).collect(),
            })
            .collect();
        let thermal = instance
            .units
            .thermal
            .iter()
            .enumerate()
            .map(|(i, u)| ThermalSchedule {
                id: u.id.clone(),
                p_mw: read(&lay.th_p[i]),
                reserve_up_mw: read(&lay.th_ru[i]),
                reserve_down_mw: read(&lay.th_rd[i]),
            })
            .collect();
        let renewable = instance
            .units
            .renewable
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let p = read(&lay.re_p[i]);
                let available: Vec<f64> = (0..periods).map(|t| u.available_mw.at(t)).collect();
                let curtailment = available.iter().zip(&p).map(|(a, p)| (a - p).max(0.0)).collect();
                RenewableSchedule {
                    id: u.id.clone(),
                    p_mw: p,
                    available_mw: available,
                    curtailment_mw: curtailment,
                }
            })
            .collect();
        let buildings: Vec<BuildingSchedule> = dhs
            .buildings
            .iter()
            .zip(&lay.buildings)
            .map(|(spec, (offset, cons))| BuildingSchedule {
                id: spec.id.clone(),
                t_wall: (0..cons.walls)
                    .map(|i| (0..periods).map(|t| x[offset + cons.wall_var(i, t)]).collect())
                    .collect(),
                t_room: (0..periods).map(|t| x[offset + cons.room_var(t)]).collect(),
                heat_w: (0..periods).map(|t| x[offset + cons.heat_var(t)]).collect(),
            })
            .collect();
        let pump_head: Vec<Vec<f64>> = lay
            .head
            .iter()
            .map(|h| match h {
                Some(v) => v.iter().map(|&i| x[i] * BAR).collect(),
                None => vec![0.0; periods],
            })
            .collect();
        let pump_power_mw = dhs
            .pipelines
            .iter()
            .enumerate()
            .map(|(b, p)| {
                (0..periods)
                    .map(|t| match &p.pump {
                        Some(pump) => self.flows[b][t] * pump_head[b][t] / (consts.rho * pump.efficiency) * 1e-6,
                        None => 0.0,
                    })
                    .collect()
            })
            .collect();
        let node_heat_mw = dhs
            .nodes
            .iter()
            .map(|node| {
                (0..periods)
                    .map(|t| {
                        let mut q = 0.0;
                        for (i, u) in instance.units.chp.iter().enumerate() {
                            if u.dhs_node == node.id {
                                q += x[lay.chp_q[i][t]];
                            }
                        }
                        for (spec, b) in dhs.buildings.iter().zip(&buildings) {
                            if spec.dhs_node == node.id {
                                q -= spec.room_count * b.heat_w[t] * 1e-6;
                            }
                        }
                        q
                    })
                    .collect()
            })
            .collect();
        let mut solution = DispatchSolution {
            model: self.options.model,
            pump_load: self.options.pump_load,
            objective: Default::default(),
            chp,
            thermal,
            renewable,
            dhs: DhsSchedule {
                mass_flow: self.flows.clone(),
                t_node: lay.t_node.iter().map(|v| read(v)).collect(),
                h_node: lay.h_node.iter().map(|v| v.iter().map(|&i| x[i] * BAR).collect()).collect(),
                pump_head,
                pump_power_mw,
                t_lossless: lay.t_lossless.iter().map(|v| read(v)).collect(),
                t_out: lay.t_out.iter().map(|v| read(v)).collect(),
                weights: self.weights.clone(),
                node_heat_mw,
            },
            buildings,
        };
        solution.objective = evaluate_objective(instance, &solution);
        solution
    }
}

/// Result of evaluating one flow point.
#[derive(Debug, Clone)]
pub enum SpOutcome {
    Optimal {
        sub: Subproblem,
        qp: QpSolution,
        solution: DispatchSolution,
    },
    /// The dispatch QP is infeasible; holds the solved feasibility LP.
    Infeasible { sub: Subproblem, qp: QpSolution },
}

/// Solves the dispatch QP at fixed flows, falling back to the feasibility LP.
pub fn solve_at(instance: &DispatchInstance, flows: &[Vec<f64>], options: &DispatchOptions) -> Result<SpOutcome> {
    let sub = build_subproblem(instance, flows, options)?;
    let qp = solve_qp(&sub.problem, &options.solver)?;
    match qp.status {
        QpStatus::Optimal => {
            let solution = sub.extract(instance, &qp);
            Ok(SpOutcome::Optimal { sub, qp, solution })
        }
        QpStatus::Infeasible => {
            let fp = build_feasibility_problem(instance, flows, options)?;
            let fqp = solve_qp(&fp.problem, &options.solver)?;
            if fqp.status != QpStatus::Optimal {
                return Err(Error::Decomposition(format!(
                    "feasibility problem ended with status {}; only mixing balances are relaxed",
                    fqp.status.as_str()
                )));
            }
            Ok(SpOutcome::Infeasible { sub: fp, qp: fqp })
        }
        other => Err(Error::Decomposition(format!("dispatch subproblem ended with status {}", other.as_str()))),
    }
}
