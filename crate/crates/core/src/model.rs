//! Instance data for the integrated power and district heating system.
//!
//! Units: powers in MW, heat flows inside buildings in W, temperatures in °C,
//! pressures and pump heads in Pa, mass flows in kg/s, lengths in m.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipe::PipeParams;

/// A per-period series given either as one value for every period or as an
/// explicit array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Series {
    Constant(f64),
    Values(Vec<f64>),
}

impl Series {
    pub fn at(&self, period: usize) -> f64 {
        match self {
            Series::Constant(v) => *v,
            Series::Values(v) => v[period],
        }
    }

    /// Checks that an explicit array covers `periods` entries and is finite.
    pub fn check(&self, periods: usize, field: &str) -> Result<()> {
        let values: &[f64] = match self {
            Series::Constant(v) => std::slice::from_ref(v),
            Series::Values(v) => {
                if v.len() < periods {
                    return Err(Error::invalid(field, format!("expected {periods} values, found {}", v.len())));
                }
                v
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(field, "non-finite value"));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Series {
        match self {
            Series::Constant(v) => Series::Constant(v * factor),
            Series::Values(v) => Series::Values(v.iter().map(|x| x * factor).collect()),
        }
    }
}

impl Default for Series {
    fn default() -> Self {
        Series::Constant(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub periods: usize,
    pub dt_seconds: f64,
    /// Label of the first period in reports.
    #[serde(default)]
    pub first_period: i64,
}

impl Horizon {
    pub fn dt_hours(&self) -> f64 {
        self.dt_seconds / 3600.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Water density, kg/m³.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Water specific heat, J/(kg·K).
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_rho_air")]
    pub rho_air: f64,
    #[serde(default = "default_c_air")]
    pub c_air: f64,
}

fn default_rho() -> f64 {
    1.0e3
}
fn default_c() -> f64 {
    4.2e3
}
fn default_rho_air() -> f64 {
    1.2
}
fn default_c_air() -> f64 {
    1.005e3
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            rho: default_rho(),
            c: default_c(),
            rho_air: default_rho_air(),
            c_air: default_c_air(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    pub capacity_mw: f64,
    /// One entry per bus, in the order of `Grid::buses`.
    pub shift_factors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusDemand {
    pub bus: String,
    pub mw: Series,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Reserve {
    #[serde(default)]
    pub up_mw: Series,
    #[serde(default)]
    pub down_mw: Series,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    #[serde(default)]
    pub buses: Vec<String>,
    #[serde(default)]
    pub lines: Vec<Line>,
    #[serde(default)]
    pub demand: Vec<BusDemand>,
    #[serde(default)]
    pub reserve: Reserve,
}

impl Grid {
    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b == id)
    }

    pub fn total_demand(&self, period: usize) -> f64 {
        self.demand.iter().map(|d| d.mw.at(period)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChpUnit {
    pub id: String,
    pub bus: String,
    pub dhs_node: String,
    /// Operating-region vertices `(P, Q)` in MW, listed around the polygon.
    pub vertices: Vec<[f64; 2]>,
    /// `a0 + a1 p + a2 q + a3 p² + a4 q² + a5 p q`, $/h.
    pub cost: [f64; 6],
    /// Ramp limits `[down, up]` in MW/h.
    pub ramp_p_mw_h: [f64; 2],
    pub ramp_q_mw_h: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalUnit {
    pub id: String,
    pub bus: String,
    pub p_min: f64,
    pub p_max: f64,
    /// `d0 + d1 p + d2 p²`, $/h.
    pub cost: [f64; 3],
    /// `[down, up]` in MW/h.
    pub ramp_mw_h: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewablePlant {
    pub id: String,
    pub bus: String,
    pub available_mw: Series,
    /// Curtailment penalty, $/(MW²·h).
    pub penalty: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Units {
    #[serde(default)]
    pub chp: Vec<ChpUnit>,
    #[serde(default)]
    pub thermal: Vec<ThermalUnit>,
    #[serde(default)]
    pub renewable: Vec<RenewablePlant>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Source,
    Load,
    Junction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DhsNode {
    pub id: String,
    pub role: NodeRole,
    pub temp_bounds: [f64; 2],
    pub pressure_bounds: [f64; 2],
    /// Temperature of water entering at a node without inflow pipes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supply_temp_c: Option<Series>,
    /// Heat injection in MW used by network simulation (positive = source).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heat_injection_mw: Option<Series>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pump {
    /// `[min, max]` in Pa.
    pub head_bounds: [f64; 2],
    pub efficiency: f64,
    /// Bus that supplies the pump when pump load is counted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bus: Option<String>,
}

/// Pre-horizon flows and inlet temperatures, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowHistory {
    pub mass_flow: Vec<f64>,
    pub inlet_temp: Vec<f64>,
}

/// Flows and inlet temperatures over the horizon, used for simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipeSchedule {
    pub mass_flow: Series,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inlet_temp: Option<Series>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length_m: f64,
    pub area_m2: f64,
    /// Heat transfer coefficient to the surroundings, W/(m·K).
    pub heat_transfer_w_mk: f64,
    /// Hydraulic resistance, Pa/(kg/s)².
    #[serde(default)]
    pub resistance: f64,
    pub mass_flow_bounds: [f64; 2],
    pub ambient_c: Series,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump: Option<Pump>,
    /// Number of past periods in the transport window; derived from the
    /// minimum flow when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_depth: Option<usize>,
    pub history: FlowHistory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<PipeSchedule>,
}

impl PipelineSpec {
    pub fn water_mass(&self, c: &Constants) -> f64 {
        c.rho * self.area_m2 * self.length_m
    }

    /// Window depth: explicit, or the number of minimum-flow periods needed to flush the pipe.
    pub fn depth(&self, c: &Constants, dt: f64) -> Option<usize> {
        if let Some(d) = self.history_depth {
            return Some(d);
        }
        let m_min = self.mass_flow_bounds[0];
        if m_min > 0.0 {
            Some((self.water_mass(c) / (m_min * dt) - 1e-9).ceil().max(1.0) as usize)
        } else {
            None
        }
    }

    pub fn params(&self, c: &Constants, dt: f64) -> PipeParams {
        let depth = self.depth(c, dt).unwrap_or(self.history.mass_flow.len());
        PipeParams::new(self.length_m, self.area_m2, self.heat_transfer_w_mk, c.rho, c.c, dt, depth)
    }

    /// Flow at period `t`; negative periods read the history.
    pub fn history_flow(&self, t: i64) -> f64 {
        let h = &self.history.mass_flow;
        h[(h.len() as i64 + t) as usize]
    }

    pub fn history_temp(&self, t: i64) -> f64 {
        let h = &self.history.inlet_temp;
        h[(h.len() as i64 + t) as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub area_m2: f64,
    /// Convective coefficient at the inner surface, W/(m²·K).
    pub convection_w_m2k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingSpec {
    pub id: String,
    pub dhs_node: String,
    pub room_count: f64,
    pub volume_m3: f64,
    pub ventilation_m3_s: Series,
    pub walls: Vec<Wall>,
    /// Radiative conductance between wall surfaces, W/(m²·K), symmetric.
    #[serde(default)]
    pub radiation_w_m2k: Vec<Vec<f64>>,
    /// Conduction response factors, W/(m²·K), `j = 0..=N_s`.
    pub response_y: Vec<f64>,
    pub response_z: Vec<f64>,
    #[serde(default)]
    pub internal_gain_w: Series,
    pub room_temp_min: Series,
    pub room_temp_max: Series,
    pub outdoor_temp_c: Series,
    /// Outdoor temperatures before the horizon, oldest first; defaults to the first horizon value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outdoor_history_c: Option<Vec<f64>>,
    /// Per wall, oldest first; defaults to the minimum room temperature.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_temp_history: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_temp_history: Option<Vec<f64>>,
}

impl BuildingSpec {
    pub fn order(&self) -> usize {
        self.response_z.len() - 1
    }

    pub fn radiation(&self, i: usize, k: usize) -> f64 {
        self.radiation_w_m2k.get(i).and_then(|r| r.get(k)).copied().unwrap_or(0.0)
    }

    /// Outdoor temperature at period `t`, reading the history for `t < 0`.
    pub fn outdoor(&self, t: i64) -> f64 {
        if t >= 0 {
            return self.outdoor_temp_c.at(t as usize);
        }
        match &self.outdoor_history_c {
            Some(h) if (h.len() as i64) + t >= 0 => h[(h.len() as i64 + t) as usize],
            _ => self.outdoor_temp_c.at(0),
        }
    }

    pub fn wall_history(&self, wall: usize, t: i64) -> f64 {
        debug_assert!(t < 0);
        match &self.wall_temp_history {
            Some(h) if (h[wall].len() as i64) + t >= 0 => h[wall][(h[wall].len() as i64 + t) as usize],
            _ => self.room_temp_min.at(0),
        }
    }

    pub fn room_history(&self, t: i64) -> f64 {
        debug_assert!(t < 0);
        match &self.room_temp_history {
            Some(h) if (h.len() as i64) + t >= 0 => h[(h.len() as i64 + t) as usize],
            _ => self.room_temp_min.at(0),
        }
    }

    /// Air heat capacity `V c_air ρ_air`, J/K.
    pub fn air_capacity(&self, c: &Constants) -> f64 {
        self.volume_m3 * c.c_air * c.rho_air
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dhs {
    #[serde(default)]
    pub nodes: Vec<DhsNode>,
    #[serde(default)]
    pub pipelines: Vec<PipelineSpec>,
    #[serde(default)]
    pub buildings: Vec<BuildingSpec>,
}

impl Dhs {
    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn pipe_index(&self, id: &str) -> Option<usize> {
        self.pipelines.iter().position(|p| p.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchInstance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub horizon: Horizon,
    #[serde(default)]
    pub constants: Constants,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub units: Units,
    pub dhs: Dhs,
}

/// Reads and validates an instance file.
pub fn load_instance(path: impl AsRef<Path>) -> Result<DispatchInstance> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_instance(&text)
}

pub fn parse_instance(text: &str) -> Result<DispatchInstance> {
    let instance: DispatchInstance = serde_json::from_str(text)?;
    instance.validate()?;
    Ok(instance)
}

impl DispatchInstance {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn periods(&self) -> usize {
        self.horizon.periods
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.horizon;
        if h.periods == 0 {
            return Err(Error::invalid("horizon.periods", "must be at least 1"));
        }
        if !(h.dt_seconds > 0.0) || !h.dt_seconds.is_finite() {
            return Err(Error::invalid("horizon.dt_seconds", "must be positive"));
        }
        let c = &self.constants;
        for (name, v) in [("rho", c.rho), ("c", c.c), ("rho_air", c.rho_air), ("c_air", c.c_air)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("constants.{name}"), "must be positive"));
            }
        }
        self.validate_grid()?;
        self.validate_units()?;
        self.validate_dhs()?;
        Ok(())
    }

    fn validate_grid(&self) -> Result<()> {
        let g = &self.grid;
        let n = self.periods();
        let mut seen = HashMap::new();
        for (i, b) in g.buses.iter().enumerate() {
            if seen.insert(b.as_str(), i).is_some() {
                return Err(Error::invalid("grid.buses", format!("duplicate bus {b}")));
            }
        }
        for line in &g.lines {
            let field = format!("grid.lines[{}]", line.id);
            if line.shift_factors.len() != g.buses.len() {
                return Err(Error::invalid(&field, "shift factors must cover every bus"));
            }
            if !(line.capacity_mw >= 0.0) {
                return Err(Error::invalid(&field, "capacity must be non-negative"));
            }
        }
        for d in &g.demand {
            if g.bus_index(&d.bus).is_none() {
                return Err(Error::invalid("grid.demand", format!("unknown bus {}", d.bus)));
            }
            d.mw.check(n, &format!("grid.demand[{}]", d.bus))?;
        }
        g.reserve.up_mw.check(n, "grid.reserve.up_mw")?;
        g.reserve.down_mw.check(n, "grid.reserve.down_mw")?;
        Ok(())
    }

    fn validate_units(&self) -> Result<()> {
        let n = self.periods();
        let bus = |b: &str, field: &str| -> Result<()> {
            if self.grid.bus_index(b).is_none() {
                return Err(Error::invalid(field, format!("unknown bus {b}")));
            }
            Ok(())
        };
        for u in &self.units.chp {
            let field = format!("units.chp[{}]", u.id);
            bus(&u.bus, &field)?;
            if self.dhs.node_index(&u.dhs_node).is_none() {
                return Err(Error::invalid(&field, format!("unknown DHS node {}", u.dhs_node)));
            }
            validate_chp_polygon(u)?;
            if u.ramp_p_mw_h.iter().chain(&u.ramp_q_mw_h).any(|r| !(*r >= 0.0)) {
                return Err(Error::invalid(&field, "ramp limits must be non-negative"));
            }
        }
        for u in &self.units.thermal {
            let field = format!("units.thermal[{}]", u.id);
            bus(&u.bus, &field)?;
            if !(u.p_min <= u.p_max) {
                return Err(Error::invalid(&field, "p_min exceeds p_max"));
            }
            if u.cost[2] < 0.0 {
                return Err(Error::invalid(&field, "quadratic cost must be non-negative"));
            }
            if u.ramp_mw_h.iter().any(|r| !(*r >= 0.0)) {
                return Err(Error::invalid(&field, "ramp limits must be non-negative"));
            }
        }
        for u in &self.units.renewable {
            let field = format!("units.renewable[{}]", u.id);
            bus(&u.bus, &field)?;
            u.available_mw.check(n, &field)?;
            if (0..n).any(|t| u.available_mw.at(t) < 0.0) {
                return Err(Error::invalid(&field, "availability must be non-negative"));
            }
            if u.penalty < 0.0 {
                return Err(Error::invalid(&field, "penalty must be non-negative"));
            }
        }
        Ok(())
    }

    fn validate_dhs(&self) -> Result<()> {
        let n = self.periods();
        let dhs = &self.dhs;
        let c = &self.constants;
        let dt = self.horizon.dt_seconds;
        let mut ids = HashMap::new();
        for node in &dhs.nodes {
            let field = format!("dhs.nodes[{}]", node.id);
            if ids.insert(node.id.as_str(), ()).is_some() {
                return Err(Error::invalid(&field, "duplicate node id"));
            }
            if !(node.temp_bounds[0] <= node.temp_bounds[1]) {
                return Err(Error::invalid(&field, "temperature bounds reversed"));
            }
            if !(node.pressure_bounds[0] <= node.pressure_bounds[1]) {
                return Err(Error::invalid(&field, "pressure bounds reversed"));
            }
            if let Some(s) = &node.supply_temp_c {
                s.check(n, &field)?;
            }
            if let Some(s) = &node.heat_injection_mw {
                s.check(n, &field)?;
            }
        }
        let mut pipe_ids = HashMap::new();
        for p in &dhs.pipelines {
            let field = format!("dhs.pipelines[{}]", p.id);
            if pipe_ids.insert(p.id.as_str(), ()).is_some() {
                return Err(Error::invalid(&field, "duplicate pipeline id"));
            }
            if dhs.node_index(&p.from).is_none() || dhs.node_index(&p.to).is_none() {
                return Err(Error::invalid(&field, "unknown end node"));
            }
            if p.from == p.to {
                return Err(Error::invalid(&field, "pipeline starts and ends at the same node"));
            }
            if !(p.length_m > 0.0) || !(p.area_m2 > 0.0) {
                return Err(Error::invalid(&field, "length and area must be positive"));
            }
            if !(p.heat_transfer_w_mk >= 0.0) || !(p.resistance >= 0.0) {
                return Err(Error::invalid(&field, "heat transfer and resistance must be non-negative"));
            }
            let [lo, hi] = p.mass_flow_bounds;
            if !(lo >= 0.0 && lo <= hi) {
                return Err(Error::invalid(&field, "mass flow bounds must satisfy 0 <= min <= max"));
            }
            p.ambient_c.check(n, &field)?;
            let depth = p.depth(c, dt).ok_or_else(|| {
                Error::invalid(&field, "history_depth is required when the minimum mass flow is zero")
            })?;
            if depth == 0 {
                return Err(Error::invalid(&field, "history_depth must be at least 1"));
            }
            if lo > 0.0 {
                let needed = (p.water_mass(c) / (lo * dt) - 1e-9).ceil() as usize;
                if depth < needed {
                    return Err(Error::invalid(
                        &field,
                        format!("history_depth {depth} is shorter than the {needed} periods needed at minimum flow"),
                    ));
                }
            }
            let hist = &p.history;
            if hist.mass_flow.len() < depth || hist.inlet_temp.len() < depth {
                return Err(Error::invalid(&field, format!("history must cover {depth} periods")));
            }
            if hist.mass_flow.len() != hist.inlet_temp.len() {
                return Err(Error::invalid(&field, "history arrays differ in length"));
            }
            if hist.mass_flow.iter().any(|m| !(*m > 0.0)) {
                return Err(Error::invalid(&field, "history mass flows must be positive"));
            }
            if hist.inlet_temp.iter().any(|t| !t.is_finite()) {
                return Err(Error::invalid(&field, "history temperatures must be finite"));
            }
            if let Some(pump) = &p.pump {
                if !(pump.efficiency > 0.0 && pump.efficiency <= 1.0) {
                    return Err(Error::invalid(&field, "pump efficiency must lie in (0, 1]"));
                }
                if !(pump.head_bounds[0] <= pump.head_bounds[1]) {
                    return Err(Error::invalid(&field, "pump head bounds reversed"));
                }
                if let Some(b) = &pump.bus {
                    if self.grid.bus_index(b).is_none() {
                        return Err(Error::invalid(&field, format!("unknown pump bus {b}")));
                    }
                }
            }
            if let Some(s) = &p.schedule {
                s.mass_flow.check(n, &field)?;
                if let Some(t) = &s.inlet_temp {
                    t.check(n, &field)?;
                }
            }
        }
        for b in &dhs.buildings {
            let field = format!("dhs.buildings[{}]", b.id);
            if dhs.node_index(&b.dhs_node).is_none() {
                return Err(Error::invalid(&field, format!("unknown DHS node {}", b.dhs_node)));
            }
            if !(b.volume_m3 > 0.0) || !(b.room_count > 0.0) {
                return Err(Error::invalid(&field, "volume and room count must be positive"));
            }
            if b.walls.is_empty() || b.walls.iter().any(|w| !(w.area_m2 > 0.0) || !(w.convection_w_m2k >= 0.0)) {
                return Err(Error::invalid(&field, "walls need positive areas and non-negative convection"));
            }
            if b.response_y.len() != b.response_z.len() || b.response_z.len() < 2 {
                return Err(Error::invalid(&field, "response factors need matching lengths with order >= 1"));
            }
            let nw = b.walls.len();
            if !b.radiation_w_m2k.is_empty() {
                if b.radiation_w_m2k.len() != nw || b.radiation_w_m2k.iter().any(|r| r.len() != nw) {
                    return Err(Error::invalid(&field, "radiation matrix must be walls x walls"));
                }
                for i in 0..nw {
                    for k in 0..nw {
                        if (b.radiation(i, k) - b.radiation(k, i)).abs() > 1e-12 {
                            return Err(Error::invalid(&field, "radiation matrix must be symmetric"));
                        }
                    }
                }
            }
            for (s, name) in [
                (&b.ventilation_m3_s, "ventilation"),
                (&b.internal_gain_w, "internal gain"),
                (&b.room_temp_min, "room_temp_min"),
                (&b.room_temp_max, "room_temp_max"),
                (&b.outdoor_temp_c, "outdoor_temp_c"),
            ] {
                s.check(n, &format!("{field}.{name}"))?;
            }
            if (0..n).any(|t| b.room_temp_min.at(t) > b.room_temp_max.at(t)) {
                return Err(Error::invalid(&field, "room temperature bounds reversed"));
            }
            if let Some(h) = &b.wall_temp_history {
                if h.len() != nw {
                    return Err(Error::invalid(&field, "wall history needs one array per wall"));
                }
            }
        }
        Ok(())
    }
}

/// Checks that CHP vertices form a strictly convex polygon and that the cost
/// is jointly convex in `(p, q)`.
pub fn validate_chp_polygon(unit: &ChpUnit) -> Result<()> {
    let field = format!("units.chp[{}]", unit.id);
    let v = &unit.vertices;
    if v.len() < 3 {
        return Err(Error::invalid(&field, "an operating region needs at least 3 vertices"));
    }
    let [_, _, _, a3, a4, a5] = unit.cost;
    if a3 < 0.0 || a4 < 0.0 || 4.0 * a3 * a4 < a5 * a5 {
        return Err(Error::invalid(&field, "cost is not convex (requires 4 a3 a4 >= a5^2)"));
    }
    let scale = v.iter().fold(1.0_f64, |m, p| m.max(p[0].abs()).max(p[1].abs()));
    let mut sign = 0.0;
    for i in 0..v.len() {
        let a = v[i];
        let b = v[(i + 1) % v.len()];
        let c = v[(i + 2) % v.len()];
        let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        if cross.abs() <= 1e-9 * scale * scale {
            return Err(Error::invalid(&field, format!("vertices {} to {} are collinear", i, (i + 2) % v.len())));
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return Err(Error::invalid(&field, "operating region is not convex"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(a5: f64) -> ChpUnit {
        ChpUnit {
            id: "c".into(),
            bus: "b".into(),
            dhs_node: "n".into(),
            vertices: vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]],
            cost: [0.0, 0.0, 0.0, 1.0, 1.0, a5],
            ramp_p_mw_h: [1.0, 1.0],
            ramp_q_mw_h: [1.0, 1.0],
            initial_p: None,
            initial_q: None,
        }
    }

    #[test]
    fn square_polygon_accepted() {
        validate_chp_polygon(&square(0.0)).unwrap();
    }

    #[test]
    fn cross_term_too_large() {
        assert!(validate_chp_polygon(&square(3.0)).is_err());
    }

    #[test]
    fn collinear_vertex_rejected() {
        let mut u = square(0.0);
        u.vertices.insert(1, [5.0, 0.0]);
        assert!(validate_chp_polygon(&u).is_err());
    }

    #[test]
    fn reflex_vertex_rejected() {
        let mut u = square(0.0);
        u.vertices.insert(2, [5.0, 5.0]);
        assert!(validate_chp_polygon(&u).is_err());
    }

    #[test]
    fn series_reads_constant_and_array() {
        assert_eq!(Series::Constant(3.0).at(7), 3.0);
        assert_eq!(Series::Values(vec![1.0, 2.0]).at(1), 2.0);
        assert!(Series::Values(vec![1.0]).check(2, "x").is_err());
    }
}
