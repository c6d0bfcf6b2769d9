use serde::{Deserialize, Serialize};

use crate::hydraulics::PipeModel;
use crate::model::DispatchInstance;
use crate::pipe::WaterColumnWeights;

/// Cost over the horizon, $.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Objective {
    pub total: f64,
    pub chp: f64,
    pub thermal: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChpSchedule {
    pub id: String,
    pub p_mw: Vec<f64>,
    pub q_mw: Vec<f64>,
    /// Vertex weights `[period][vertex]`.
    pub zeta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalSchedule {
    pub id: String,
    pub p_mw: Vec<f64>,
    pub reserve_up_mw: Vec<f64>,
    pub reserve_down_mw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewableSchedule {
    pub id: String,
    pub p_mw: Vec<f64>,
    pub available_mw: Vec<f64>,
    pub curtailment_mw: Vec<f64>,
}

/// Network state, indexed `[pipe or node][period]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DhsSchedule {
    pub mass_flow: Vec<Vec<f64>>,
    pub t_node: Vec<Vec<f64>>,
    /// Node pressure, Pa.
    pub h_node: Vec<Vec<f64>>,
    /// Pump head, Pa; zero on pipes without a pump.
    pub pump_head: Vec<Vec<f64>>,
    pub pump_power_mw: Vec<Vec<f64>>,
    pub t_lossless: Vec<Vec<f64>>,
    pub t_out: Vec<Vec<f64>>,
    /// Fill weights used by the transport model; empty under the steady model.
    pub weights: Vec<Vec<WaterColumnWeights>>,
    /// Net heat injected at each node, MW.
    pub node_heat_mw: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingSchedule {
    pub id: String,
    /// `[wall][period]`.
    pub t_wall: Vec<Vec<f64>>,
    pub t_room: Vec<f64>,
    /// Heat delivered per room, W.
    pub heat_w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    pub model: PipeModel,
    pub pump_load: bool,
    pub objective: Objective,
    pub chp: Vec<ChpSchedule>,
    pub thermal: Vec<ThermalSchedule>,
    pub renewable: Vec<RenewableSchedule>,
    pub dhs: DhsSchedule,
    pub buildings: Vec<BuildingSchedule>,
}

impl DispatchSolution {
    pub fn periods(&self) -> usize {
        self.dhs.mass_flow.first().map_or(0, |m| m.len())
    }

    /// Total renewable curtailment per period, MW.
    pub fn curtailment(&self) -> Vec<f64> {
        let n = self.periods();
        (0..n)
            .map(|t| self.renewable.iter().map(|r| r.curtailment_mw[t]).sum())
            .collect()
    }

    /// Curtailed energy over the horizon, MWh.
    pub fn total_curtailment_mwh(&self, dt_hours: f64) -> f64 {
        self.curtailment().iter().sum::<f64>() * dt_hours
    }

    /// Total CHP heat output per period, MW.
    pub fn heat_output(&self) -> Vec<f64> {
        (0..self.periods())
            .map(|t| self.chp.iter().map(|u| u.q_mw[t]).sum())
            .collect()
    }

    /// Heat drawn by all buildings per period, MW.
    pub fn heat_load(&self, instance: &DispatchInstance) -> Vec<f64> {
        (0..self.periods())
            .map(|t| {
                instance
                    .dhs
                    .buildings
                    .iter()
                    .zip(&self.buildings)
                    .map(|(spec, b)| spec.room_count * b.heat_w[t] * 1e-6)
                    .sum()
            })
            .collect()
    }
}

/// Recomputes the cost breakdown from the schedules.
pub fn evaluate_objective(instance: &DispatchInstance, sol: &DispatchSolution) -> Objective {
    let dt_h = instance.horizon.dt_hours();
    let mut obj = Objective::default();
    for (u, s) in instance.units.chp.iter().zip(&sol.chp) {
        let [a0, a1, a2, a3, a4, a5] = u.cost;
        for (p, q) in s.p_mw.iter().zip(&s.q_mw) {
            obj.chp += dt_h * (a0 + a1 * p + a2 * q + a3 * p * p + a4 * q * q + a5 * p * q);
        }
    }
    for (u, s) in instance.units.thermal.iter().zip(&sol.thermal) {
        let [d0, d1, d2] = u.cost;
        for p in &s.p_mw {
            obj.thermal += dt_h * (d0 + d1 * p + d2 * p * p);
        }
    }
    for (u, s) in instance.units.renewable.iter().zip(&sol.renewable) {
        for (t, p) in s.p_mw.iter().enumerate() {
            let gap = u.available_mw.at(t) - p;
            obj.penalty += dt_h * u.penalty * gap * gap;
        }
    }
    obj.total = obj.chp + obj.thermal + obj.penalty;
    obj
}
