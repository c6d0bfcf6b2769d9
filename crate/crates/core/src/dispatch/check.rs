//! Re-evaluates a dispatch against the model equations straight from the
//! instance data. Nothing here goes through the QP assembly.

use std::collections::BTreeMap;

use serde::Serialize;

use super::DispatchSolution;
use crate::building::{building_residuals, BuildingState};
use crate::hydraulics::{continuity_residual, mixing_residual, pressure_residual, pump_power, PipeModel, Topology};
use crate::model::DispatchInstance;
use crate::pipe::{self, PipeParams};

/// Largest violation per constraint family. Units: MW for power and heat
/// rows, °C for temperatures and mixing, bar for pressures, kg/s for flows,
/// relative for building balances and weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub tol: f64,
    pub families: BTreeMap<String, f64>,
}

impl FeasibilityReport {
    pub fn max(&self) -> f64 {
        self.families.values().fold(0.0_f64, |m, v| m.max(*v))
    }

    pub fn passed(&self) -> bool {
        self.families.values().all(|v| *v <= self.tol)
    }

    /// Families above tolerance.
    pub fn violations(&self) -> Vec<(&str, f64)> {
        self.families
            .iter()
            .filter(|(_, v)| **v > self.tol)
            .map(|(k, v)| (k.as_str(), *v))
            .collect()
    }

    fn record(&mut self, family: &str, value: f64) {
        let v = if value.is_nan() { f64::INFINITY } else { value.max(0.0) };
        let e = self.families.entry(family.to_string()).or_insert(0.0);
        *e = e.max(v);
    }
}

fn outside(x: f64, lo: f64, hi: f64) -> f64 {
    (lo - x).max(x - hi).max(0.0)
}

fn ramp_violation(series: &[f64], initial: Option<f64>, [down, up]: [f64; 2], dt_h: f64) -> f64 {
    let mut worst = 0.0_f64;
    let mut prev = initial;
    for &x in series {
        if let Some(p) = prev {
            worst = worst.max(x - p - up * dt_h).max(p - x - down * dt_h);
        }
        prev = Some(x);
    }
    worst
}

pub fn check_feasibility(instance: &DispatchInstance, sol: &DispatchSolution, tol: f64) -> FeasibilityReport {
    let mut rep = FeasibilityReport {
        tol,
        families: BTreeMap::new(),
    };
    let periods = instance.periods();
    if sol.periods() != periods {
        rep.record("shape", f64::INFINITY);
        return rep;
    }
    let dt_h = instance.horizon.dt_hours();
    let dt = instance.horizon.dt_seconds;
    let consts = &instance.constants;
    let grid = &instance.grid;
    let dhs = &instance.dhs;

    // Units.
    for (u, s) in instance.units.chp.iter().zip(&sol.chp) {
        for t in 0..periods {
            let z = &s.zeta[t];
            let sum: f64 = z.iter().sum();
            let p: f64 = z.iter().zip(&u.vertices).map(|(w, v)| w * v[0]).sum();
            let q: f64 = z.iter().zip(&u.vertices).map(|(w, v)| w * v[1]).sum();
            let bounds = z.iter().fold(0.0_f64, |m, w| m.max(outside(*w, 0.0, 1.0)));
            rep.record("chp_region", (sum - 1.0).abs().max(bounds));
            rep.record("chp_region", (p - s.p_mw[t]).abs().max((q - s.q_mw[t]).abs()));
        }
        rep.record("chp_ramp", ramp_violation(&s.p_mw, u.initial_p, u.ramp_p_mw_h, dt_h));
        rep.record("chp_ramp", ramp_violation(&s.q_mw, u.initial_q, u.ramp_q_mw_h, dt_h));
    }
    for (u, s) in instance.units.thermal.iter().zip(&sol.thermal) {
        let [down, up] = u.ramp_mw_h;
        for t in 0..periods {
            let (p, ru, rd) = (s.p_mw[t], s.reserve_up_mw[t], s.reserve_down_mw[t]);
            rep.record("thermal_limits", outside(p, u.p_min, u.p_max));
            rep.record("reserve_limits", outside(ru, 0.0, up * dt_h).max(outside(rd, 0.0, down * dt_h)));
            rep.record("reserve_limits", (p + ru - u.p_max).max(u.p_min - (p - rd)));
        }
        rep.record("thermal_ramp", ramp_violation(&s.p_mw, u.initial_p, u.ramp_mw_h, dt_h));
    }
    if !instance.units.thermal.is_empty() {
        for t in 0..periods {
            let up: f64 = sol.thermal.iter().map(|s| s.reserve_up_mw[t]).sum();
            let down: f64 = sol.thermal.iter().map(|s| s.reserve_down_mw[t]).sum();
            rep.record("reserve_requirement", grid.reserve.up_mw.at(t) - up);
            rep.record("reserve_requirement", grid.reserve.down_mw.at(t) - down);
        }
    }
    for (u, s) in instance.units.renewable.iter().zip(&sol.renewable) {
        for t in 0..periods {
            rep.record("renewable_limits", outside(s.p_mw[t], 0.0, u.available_mw.at(t)));
        }
    }

    // Power network.
    let nbus = grid.buses.len();
    for t in 0..periods {
        let mut inj = vec![0.0; nbus];
        let bus = |id: &str| grid.buses.iter().position(|b| b == id).unwrap_or(0);
        for (u, s) in instance.units.chp.iter().zip(&sol.chp) {
            inj[bus(&u.bus)] += s.p_mw[t];
        }
        for (u, s) in instance.units.thermal.iter().zip(&sol.thermal) {
            inj[bus(&u.bus)] += s.p_mw[t];
        }
        for (u, s) in instance.units.renewable.iter().zip(&sol.renewable) {
            inj[bus(&u.bus)] += s.p_mw[t];
        }
        for d in &grid.demand {
            inj[bus(&d.bus)] -= d.mw.at(t);
        }
        for (b, p) in dhs.pipelines.iter().enumerate() {
            let Some(pump) = &p.pump else { continue };
            let expected = pump_power(sol.dhs.mass_flow[b][t], sol.dhs.pump_head[b][t], consts.rho, pump.efficiency)
                .unwrap_or(f64::INFINITY);
            rep.record("pump_power", (expected - sol.dhs.pump_power_mw[b][t]).abs());
            if sol.pump_load {
                if let Some(id) = &pump.bus {
                    inj[bus(id)] -= expected;
                }
            }
        }
        rep.record("power_balance", inj.iter().sum::<f64>().abs());
        for line in &grid.lines {
            let flow: f64 = line.shift_factors.iter().zip(&inj).map(|(k, v)| k * v).sum();
            rep.record("line_limits", flow.abs() - line.capacity_mw);
        }
    }

    // Hydraulics.
    let topo = Topology::new(instance);
    let m = &sol.dhs.mass_flow;
    for t in 0..periods {
        rep.record("continuity", continuity_residual(&topo, |b| m[b][t]));
    }
    for (b, p) in dhs.pipelines.iter().enumerate() {
        let (f, to) = (topo.from[b], topo.to[b]);
        for t in 0..periods {
            rep.record("flow_bounds", outside(m[b][t], p.mass_flow_bounds[0], p.mass_flow_bounds[1]));
            let head = sol.dhs.pump_head[b][t];
            match &p.pump {
                Some(pump) => rep.record("pump_head", outside(head, pump.head_bounds[0], pump.head_bounds[1]) / 1e5),
                None => rep.record("pump_head", head.abs() / 1e5),
            }
            let r = pressure_residual(sol.dhs.h_node[f][t], sol.dhs.h_node[to][t], p.resistance, m[b][t], head);
            rep.record("pressure", r.abs() / 1e5);
        }
    }
    for (n, node) in dhs.nodes.iter().enumerate() {
        for t in 0..periods {
            rep.record("pressure_bounds", outside(sol.dhs.h_node[n][t], node.pressure_bounds[0], node.pressure_bounds[1]) / 1e5);
            let tn = sol.dhs.t_node[n][t];
            if topo.inflow[n].is_empty() {
                let supply = node.supply_temp_c.as_ref().map_or(f64::NAN, |s| s.at(t));
                rep.record("supply_temperature", (tn - supply).abs());
                continue;
            }
            rep.record("temperature_bounds", outside(tn, node.temp_bounds[0], node.temp_bounds[1]));
            // Node heat rebuilt from the unit and building schedules.
            let mut q = 0.0;
            for (u, s) in instance.units.chp.iter().zip(&sol.chp) {
                if u.dhs_node == node.id {
                    q += s.q_mw[t];
                }
            }
            for (spec, bsol) in dhs.buildings.iter().zip(&sol.buildings) {
                if spec.dhs_node == node.id {
                    q -= spec.room_count * bsol.heat_w[t] * 1e-6;
                }
            }
            let inflows: Vec<(f64, f64)> = topo.inflow[n].iter().map(|&b| (m[b][t], sol.dhs.t_out[b][t])).collect();
            let out_mass: f64 = if topo.outflow[n].is_empty() {
                inflows.iter().map(|(mm, _)| mm).sum()
            } else {
                topo.outflow[n].iter().map(|&b| m[b][t]).sum()
            };
            let r = mixing_residual(consts.c, &inflows, out_mass, tn, q * 1e6);
            rep.record("mixing", r.abs() / (consts.c * out_mass.max(1e-9)));
        }
    }

    // Pipe transport.
    for (b, p) in dhs.pipelines.iter().enumerate() {
        let params = PipeParams::new(p.length_m, p.area_m2, p.heat_transfer_w_mk, consts.rho, consts.c, dt, {
            p.history_depth.unwrap_or_else(|| {
                let lo = p.mass_flow_bounds[0];
                (consts.rho * p.area_m2 * p.length_m / (lo * dt) - 1e-9).ceil() as usize
            })
        });
        let from = topo.from[b];
        let inlet = |k: i64| -> f64 {
            if k >= 0 {
                sol.dhs.t_node[from][k as usize]
            } else {
                let h = &p.history.inlet_temp;
                h[(h.len() as i64 + k) as usize]
            }
        };
        let flow = |k: i64| -> f64 {
            if k >= 0 {
                m[b][k as usize]
            } else {
                let h = &p.history.mass_flow;
                h[(h.len() as i64 + k) as usize]
            }
        };
        for t in 0..periods {
            let ambient = p.ambient_c.at(t);
            let (t_l, t_e) = (sol.dhs.t_lossless[b][t], sol.dhs.t_out[b][t]);
            match sol.model {
                PipeModel::Steady => {
                    let tin = inlet(t as i64);
                    rep.record("pipe_lossless", (t_l - tin).abs());
                    match pipe::steady_outlet(&params, m[b][t], tin, ambient) {
                        Ok(v) => rep.record("pipe_outlet", (t_e - v).abs()),
                        Err(_) => rep.record("pipe_outlet", f64::INFINITY),
                    }
                }
                _ => {
                    let lags: Vec<i64> = (0..=params.depth as i64).map(|k| t as i64 - k).collect();
                    let fw: Vec<f64> = lags.iter().map(|&k| flow(k)).collect();
                    let tw: Vec<f64> = lags.iter().map(|&k| inlet(k)).collect();
                    let outlet = if sol.model == PipeModel::Nm {
                        pipe::nm_outlet(&params, &fw, &tw, ambient)
                    } else {
                        pipe::wmm_outlet(&params, &fw, &tw, ambient)
                    };
                    match outlet {
                        Ok(r) => {
                            rep.record("pipe_lossless", (t_l - r.t_lossless).abs());
                            rep.record("pipe_outlet", (t_e - r.t_out).abs());
                        }
                        Err(_) => rep.record("pipe_outlet", f64::INFINITY),
                    }
                    if let (Some(per), Ok(w)) = (sol.dhs.weights.get(b), pipe::fill_weights(&params, &fw)) {
                        if let Some(reported) = per.get(t) {
                            let diff = reported
                                .alpha
                                .iter()
                                .zip(&w.alpha)
                                .chain(reported.beta.iter().zip(&w.beta))
                                .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
                            let len_ok = reported.alpha.len() == w.alpha.len() && reported.beta.len() == w.beta.len();
                            rep.record("weights", if len_ok { diff } else { f64::INFINITY });
                        }
                    }
                }
            }
        }
    }

    // Buildings.
    for (spec, bsol) in dhs.buildings.iter().zip(&sol.buildings) {
        let state = BuildingState {
            t_wall: bsol.t_wall.clone(),
            t_room: bsol.t_room.clone(),
            heat_input: bsol.heat_w.clone(),
        };
        let (wall, air) = building_residuals(spec, consts, dt, &state);
        rep.record("building_balance", wall.max(air));
        for t in 0..periods {
            rep.record(
                "room_temperature",
                outside(bsol.t_room[t], spec.room_temp_min.at(t), spec.room_temp_max.at(t)),
            );
            rep.record("heat_nonnegative", -bsol.heat_w[t] * 1e-6);
        }
    }

    // Reported objective against a fresh evaluation.
    let mut cost = 0.0;
    for (u, s) in instance.units.chp.iter().zip(&sol.chp) {
        let a = u.cost;
        for t in 0..periods {
            let (p, q) = (s.p_mw[t], s.q_mw[t]);
            cost += dt_h * (a[0] + a[1] * p + a[2] * q + a[3] * p * p + a[4] * q * q + a[5] * p * q);
        }
    }
    for (u, s) in instance.units.thermal.iter().zip(&sol.thermal) {
        for t in 0..periods {
            let p = s.p_mw[t];
            cost += dt_h * (u.cost[0] + u.cost[1] * p + u.cost[2] * p * p);
        }
    }
    for (u, s) in instance.units.renewable.iter().zip(&sol.renewable) {
        for t in 0..periods {
            let gap = u.available_mw.at(t) - s.p_mw[t];
            cost += dt_h * u.penalty * gap * gap;
        }
    }
    rep.record("objective", (cost - sol.objective.total).abs() / cost.abs().max(1.0));
    rep
}
