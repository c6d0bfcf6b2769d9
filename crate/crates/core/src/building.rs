//! Room heat balance with response-factor wall conduction.
//!
//! Wall equations are per unit wall area (W/m²): conduction from the response
//! factors, radiation exchange with the other walls and convection to the room
//! air. The air equation is in W and carries the air capacity term divided by
//! the period length.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BuildingSpec, Constants, Horizon};

/// Trajectory of one (representative) room. Wall temperatures are
/// `t_wall[wall][period]`; heat input is per room, W.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildingState {
    pub t_wall: Vec<Vec<f64>>,
    pub t_room: Vec<f64>,
    pub heat_input: Vec<f64>,
}

impl BuildingState {
    pub fn new(walls: usize) -> Self {
        Self {
            t_wall: vec![Vec::new(); walls],
            t_room: Vec::new(),
            heat_input: Vec::new(),
        }
    }

    pub fn periods(&self) -> usize {
        self.t_room.len()
    }

    fn wall(&self, spec: &BuildingSpec, i: usize, t: i64) -> f64 {
        if t < 0 {
            spec.wall_history(i, t)
        } else {
            self.t_wall[i][t as usize]
        }
    }

    fn room(&self, spec: &BuildingSpec, t: i64) -> f64 {
        if t < 0 {
            spec.room_history(t)
        } else {
            self.t_room[t as usize]
        }
    }
}

/// Known part of the wall equation at `tau`: outdoor conduction minus the
/// contribution of past wall temperatures.
fn wall_history_term(spec: &BuildingSpec, state: &BuildingState, wall: usize, tau: usize) -> f64 {
    let mut acc = 0.0;
    for j in 0..=spec.order() {
        let t = tau as i64 - j as i64;
        acc += spec.response_y[j] * spec.outdoor(t);
        if j > 0 {
            acc -= spec.response_z[j] * state.wall(spec, wall, t);
        }
    }
    acc
}

/// Advances the room by one period with the given heat input (W per room).
/// `state` must hold periods `0..tau`.
pub fn building_step(
    spec: &BuildingSpec,
    constants: &Constants,
    dt: f64,
    state: &BuildingState,
    tau: usize,
    heat_input: f64,
) -> Result<(Vec<f64>, f64)> {
    let nw = spec.walls.len();
    let mut a = DMatrix::<f64>::zeros(nw + 1, nw + 1);
    let mut b = DVector::<f64>::zeros(nw + 1);
    for i in 0..nw {
        let h = spec.walls[i].convection_w_m2k;
        let mut diag = -spec.response_z[0] - h;
        for k in 0..nw {
            if k != i {
                let phi = spec.radiation(i, k);
                a[(i, k)] += phi;
                diag -= phi;
            }
        }
        a[(i, i)] = diag;
        a[(i, nw)] = h;
        b[i] = -wall_history_term(spec, state, i, tau);
    }
    let vent = spec.ventilation_m3_s.at(tau) * constants.c_air * constants.rho_air;
    let cap = spec.air_capacity(constants) / dt;
    let mut room = -vent - cap;
    for (k, w) in spec.walls.iter().enumerate() {
        let sh = w.area_m2 * w.convection_w_m2k;
        a[(nw, k)] = sh;
        room -= sh;
    }
    a[(nw, nw)] = room;
    b[nw] = -vent * spec.outdoor(tau as i64)
        - spec.internal_gain_w.at(tau)
        - heat_input
        - cap * state.room(spec, tau as i64 - 1);
    let x = a.lu().solve(&b).ok_or_else(|| Error::SingularBuilding {
        building: spec.id.clone(),
        period: tau,
    })?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularBuilding {
            building: spec.id.clone(),
            period: tau,
        });
    }
    Ok((x.rows(0, nw).iter().copied().collect(), x[nw]))
}

/// Forward simulation under a heat-input schedule (W per room).
pub fn simulate_building(spec: &BuildingSpec, constants: &Constants, dt: f64, heat_input: &[f64]) -> Result<BuildingState> {
    let mut state = BuildingState::new(spec.walls.len());
    for (tau, &q) in heat_input.iter().enumerate() {
        let (walls, room) = building_step(spec, constants, dt, &state, tau, q)?;
        for (i, w) in walls.into_iter().enumerate() {
            state.t_wall[i].push(w);
        }
        state.t_room.push(room);
        state.heat_input.push(q);
    }
    Ok(state)
}

/// Heat input (W per room) that holds the room on `t_room`, with the wall
/// temperatures it implies.
pub fn heat_for_room_temps(spec: &BuildingSpec, constants: &Constants, dt: f64, t_room: &[f64]) -> Result<BuildingState> {
    let nw = spec.walls.len();
    let mut state = BuildingState::new(nw);
    for (tau, &tr) in t_room.iter().enumerate() {
        let mut a = DMatrix::<f64>::zeros(nw, nw);
        let mut b = DVector::<f64>::zeros(nw);
        for i in 0..nw {
            let h = spec.walls[i].convection_w_m2k;
            let mut diag = -spec.response_z[0] - h;
            for k in 0..nw {
                if k != i {
                    let phi = spec.radiation(i, k);
                    a[(i, k)] += phi;
                    diag -= phi;
                }
            }
            a[(i, i)] = diag;
            b[i] = -wall_history_term(spec, &state, i, tau) - h * tr;
        }
        let walls = a.lu().solve(&b).ok_or_else(|| Error::SingularBuilding {
            building: spec.id.clone(),
            period: tau,
        })?;
        state.t_room.push(tr);
        for i in 0..nw {
            state.t_wall[i].push(walls[i]);
        }
        let vent = spec.ventilation_m3_s.at(tau) * constants.c_air * constants.rho_air;
        let cap = spec.air_capacity(constants) / dt;
        let conv: f64 = spec
            .walls
            .iter()
            .enumerate()
            .map(|(k, w)| w.area_m2 * w.convection_w_m2k * (walls[k] - tr))
            .sum();
        let prev = state.room(spec, tau as i64 - 1);
        let q = cap * (tr - prev) - conv + vent * (tr - spec.outdoor(tau as i64)) - spec.internal_gain_w.at(tau);
        state.heat_input.push(q);
    }
    Ok(state)
}

/// Largest wall-equation and air-equation residuals of a trajectory, each
/// relative to the largest term magnitude in its equation.
pub fn building_residuals(spec: &BuildingSpec, constants: &Constants, dt: f64, state: &BuildingState) -> (f64, f64) {
    let nw = spec.walls.len();
    let mut wall_max = 0.0_f64;
    let mut air_max = 0.0_f64;
    for tau in 0..state.periods() {
        let t = tau as i64;
        for i in 0..nw {
            let h = spec.walls[i].convection_w_m2k;
            let mut terms = Vec::new();
            for j in 0..=spec.order() {
                terms.push(spec.response_y[j] * spec.outdoor(t - j as i64));
                terms.push(-spec.response_z[j] * state.wall(spec, i, t - j as i64));
            }
            for k in 0..nw {
                if k != i {
                    terms.push(spec.radiation(i, k) * (state.t_wall[k][tau] - state.t_wall[i][tau]));
                }
            }
            terms.push(h * (state.t_room[tau] - state.t_wall[i][tau]));
            wall_max = wall_max.max(relative(&terms));
        }
        let vent = spec.ventilation_m3_s.at(tau) * constants.c_air * constants.rho_air;
        let cap = spec.air_capacity(constants) / dt;
        let mut terms: Vec<f64> = spec
            .walls
            .iter()
            .enumerate()
            .map(|(k, w)| w.area_m2 * w.convection_w_m2k * (state.t_wall[k][tau] - state.t_room[tau]))
            .collect();
        terms.push(-vent * (state.t_room[tau] - spec.outdoor(t)));
        terms.push(spec.internal_gain_w.at(tau));
        terms.push(state.heat_input[tau]);
        terms.push(-cap * (state.t_room[tau] - state.room(spec, t - 1)));
        air_max = air_max.max(relative(&terms));
    }
    (wall_max, air_max)
}

fn relative(terms: &[f64]) -> f64 {
    let sum: f64 = terms.iter().sum();
    let scale = terms.iter().fold(1.0_f64, |m, t| m.max(t.abs()));
    sum.abs() / scale
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Eq,
    Le,
    Ge,
}

/// `Σ coeff · var (kind) rhs` over the local variables of [`BuildingConstraints`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub terms: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
}

impl LinearRow {
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>() - self.rhs
    }
}

/// Linear form of the room model over a horizon. Local variables are laid out
/// period-major: walls, then room temperature, then heat input (W per room).
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingConstraints {
    pub walls: usize,
    pub periods: usize,
    /// Wall and air balances, `walls + 1` rows per period.
    pub equalities: Vec<LinearRow>,
    /// Comfort band on the room temperature, two rows per period.
    pub bounds: Vec<LinearRow>,
}

impl BuildingConstraints {
    pub fn num_vars(&self) -> usize {
        (self.walls + 2) * self.periods
    }

    pub fn wall_var(&self, wall: usize, tau: usize) -> usize {
        tau * (self.walls + 2) + wall
    }

    pub fn room_var(&self, tau: usize) -> usize {
        tau * (self.walls + 2) + self.walls
    }

    pub fn heat_var(&self, tau: usize) -> usize {
        tau * (self.walls + 2) + self.walls + 1
    }

    /// Packs a trajectory into the local variable vector.
    pub fn pack(&self, state: &BuildingState) -> Vec<f64> {
        let mut x = vec![0.0; self.num_vars()];
        for tau in 0..self.periods {
            for i in 0..self.walls {
                x[self.wall_var(i, tau)] = state.t_wall[i][tau];
            }
            x[self.room_var(tau)] = state.t_room[tau];
            x[self.heat_var(tau)] = state.heat_input[tau];
        }
        x
    }
}

pub fn assemble_building_constraints(spec: &BuildingSpec, constants: &Constants, horizon: &Horizon) -> BuildingConstraints {
    let nw = spec.walls.len();
    let mut out = BuildingConstraints {
        walls: nw,
        periods: horizon.periods,
        equalities: Vec::new(),
        bounds: Vec::new(),
    };
    let dt = horizon.dt_seconds;
    for tau in 0..horizon.periods {
        for i in 0..nw {
            let h = spec.walls[i].convection_w_m2k;
            let mut terms = Vec::new();
            let mut rhs = 0.0;
            let mut diag = -spec.response_z[0] - h;
            for k in 0..nw {
                if k != i {
                    let phi = spec.radiation(i, k);
                    if phi != 0.0 {
                        terms.push((out.wall_var(k, tau), phi));
                    }
                    diag -= phi;
                }
            }
            terms.push((out.wall_var(i, tau), diag));
            terms.push((out.room_var(tau), h));
            for j in 0..=spec.order() {
                let t = tau as i64 - j as i64;
                rhs -= spec.response_y[j] * spec.outdoor(t);
                if j == 0 {
                    continue;
                }
                if t >= 0 {
                    terms.push((out.wall_var(i, t as usize), -spec.response_z[j]));
                } else {
                    rhs += spec.response_z[j] * spec.wall_history(i, t);
                }
            }
            out.equalities.push(LinearRow {
                terms,
                kind: RowKind::Eq,
                rhs,
            });
        }
        let vent = spec.ventilation_m3_s.at(tau) * constants.c_air * constants.rho_air;
        let cap = spec.air_capacity(constants) / dt;
        let mut terms = Vec::new();
        let mut room = -vent - cap;
        for (k, w) in spec.walls.iter().enumerate() {
            let sh = w.area_m2 * w.convection_w_m2k;
            terms.push((out.wall_var(k, tau), sh));
            room -= sh;
        }
        terms.push((out.room_var(tau), room));
        terms.push((out.heat_var(tau), 1.0));
        let mut rhs = -vent * spec.outdoor(tau as i64) - spec.internal_gain_w.at(tau);
        if tau > 0 {
            terms.push((out.room_var(tau - 1), cap));
        } else {
            rhs -= cap * spec.room_history(-1);
        }
        out.equalities.push(LinearRow {
            terms,
            kind: RowKind::Eq,
            rhs,
        });
        out.bounds.push(LinearRow {
            terms: vec![(out.room_var(tau), 1.0)],
            kind: RowKind::Ge,
            rhs: spec.room_temp_min.at(tau),
        });
        out.bounds.push(LinearRow {
            terms: vec![(out.room_var(tau), 1.0)],
            kind: RowKind::Le,
            rhs: spec.room_temp_max.at(tau),
        });
    }
    out
}
