mod common;

use common::*;
use hydrodispatch::building::{
    assemble_building_constraints, building_residuals, building_step, heat_for_room_temps, simulate_building,
    BuildingState, RowKind,
};
use hydrodispatch::model::{BuildingSpec, Constants, Horizon, Series, Wall};
use proptest::prelude::*;

fn bundled() -> (BuildingSpec, Constants, Horizon) {
    let inst = six_bus();
    (inst.dhs.buildings[0].clone(), inst.constants.clone(), inst.horizon.clone())
}

/// Room model solved by Gauss–Seidel sweeps on the wall and air balances,
/// written directly from the heat balance statements.
fn gauss_seidel_trajectory(spec: &BuildingSpec, c: &Constants, dt: f64, heat: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let nw = spec.walls.len();
    let ns = spec.order();
    let mut walls: Vec<Vec<f64>> = vec![Vec::new(); nw];
    let mut room: Vec<f64> = Vec::new();
    let wall_at = |walls: &Vec<Vec<f64>>, i: usize, t: i64| {
        if t < 0 {
            spec.wall_history(i, t)
        } else {
            walls[i][t as usize]
        }
    };
    for (tau, &q) in heat.iter().enumerate() {
        let t = tau as i64;
        let mut tw: Vec<f64> = (0..nw).map(|i| wall_at(&walls, i, t - 1)).collect();
        let mut tr = if tau == 0 { spec.room_history(-1) } else { room[tau - 1] };
        for _ in 0..10_000 {
            let before = tr;
            for i in 0..nw {
                // Σ_j Y_j t_out(τ−j) − Σ_{j≥1} Z_j t_w(τ−j) − Z_0 t_w + Σ_k φ (t_k − t_w) + h (t_r − t_w) = 0
                let mut known = 0.0;
                for j in 0..=ns {
                    known += spec.response_y[j] * spec.outdoor(t - j as i64);
                    if j > 0 {
                        known -= spec.response_z[j] * wall_at(&walls, i, t - j as i64);
                    }
                }
                let h = spec.walls[i].convection_w_m2k;
                let mut num = known + h * tr;
                let mut den = spec.response_z[0] + h;
                for k in 0..nw {
                    if k != i {
                        num += spec.radiation(i, k) * tw[k];
                        den += spec.radiation(i, k);
                    }
                }
                tw[i] = num / den;
            }
            // Σ A h (t_w − t_r) + G c ρ (t_out − t_r) + gains + q = V c ρ (t_r − t_r,prev)/Δτ
            let g = spec.ventilation_m3_s.at(tau) * c.c_air * c.rho_air;
            let cap = spec.volume_m3 * c.c_air * c.rho_air / dt;
            let prev = if tau == 0 { spec.room_history(-1) } else { room[tau - 1] };
            let mut num = g * spec.outdoor(t) + spec.internal_gain_w.at(tau) + q + cap * prev;
            let mut den = g + cap;
            for (k, w) in spec.walls.iter().enumerate() {
                num += w.area_m2 * w.convection_w_m2k * tw[k];
                den += w.area_m2 * w.convection_w_m2k;
            }
            tr = num / den;
            if (tr - before).abs() < 1e-14 {
                break;
            }
        }
        for i in 0..nw {
            walls[i].push(tw[i]);
        }
        room.push(tr);
    }
    (walls, room)
}

#[test]
fn isothermal_state_is_a_fixed_point() {
    let (mut spec, c, _) = bundled();
    let excess: f64 = spec.response_y.iter().sum::<f64>() - spec.response_z.iter().sum::<f64>();
    spec.response_z[0] += excess;
    let t = 17.0;
    spec.outdoor_temp_c = Series::Constant(t);
    spec.outdoor_history_c = None;
    spec.wall_temp_history = Some(vec![vec![t; 30]; spec.walls.len()]);
    spec.room_temp_history = Some(vec![t; 30]);
    spec.internal_gain_w = Series::Constant(0.0);
    let state = simulate_building(&spec, &c, 3600.0, &[0.0; 6]).unwrap();
    for tau in 0..6 {
        assert!((state.t_room[tau] - t).abs() < 1e-9);
        for w in &state.t_wall {
            assert!((w[tau] - t).abs() < 1e-9);
        }
    }
}

#[test]
fn strong_convection_pulls_wall_to_room() {
    let (mut spec, c, _) = bundled();
    spec.walls = vec![Wall {
        area_m2: 300.0,
        convection_w_m2k: 1.0,
    }];
    spec.radiation_w_m2k = Vec::new();
    spec.wall_temp_history = None;
    let mut gaps = Vec::new();
    for h in [1.0, 1e2, 1e4, 1e6] {
        spec.walls[0].convection_w_m2k = h;
        let s = simulate_building(&spec, &c, 3600.0, &[3000.0; 4]).unwrap();
        gaps.push((s.t_wall[0][3] - s.t_room[3]).abs());
    }
    assert!(gaps.windows(2).all(|g| g[1] < g[0]), "{gaps:?}");
    assert!(gaps[3] < 1e-3);
}

#[test]
fn simulation_matches_iterative_oracle() {
    let (spec, c, h) = bundled();
    let heat: Vec<f64> = (0..h.periods).map(|t| if t < 8 { 1000.0 } else { 4000.0 }).collect();
    let state = simulate_building(&spec, &c, h.dt_seconds, &heat).unwrap();
    let (walls, room) = gauss_seidel_trajectory(&spec, &c, h.dt_seconds, &heat);
    for tau in 0..h.periods {
        assert!((state.t_room[tau] - room[tau]).abs() < 1e-8, "{tau}");
        for i in 0..spec.walls.len() {
            assert!((state.t_wall[i][tau] - walls[i][tau]).abs() < 1e-8);
        }
    }
}

#[test]
fn simulated_trajectory_has_negligible_residuals() {
    let inst = six_bus();
    for spec in &inst.dhs.buildings {
        let heat: Vec<f64> = (0..inst.periods()).map(|t| 2500.0 + 800.0 * (t as f64 / 3.0).sin()).collect();
        let s = simulate_building(spec, &inst.constants, inst.horizon.dt_seconds, &heat).unwrap();
        let (wall, air) = building_residuals(spec, &inst.constants, inst.horizon.dt_seconds, &s);
        assert!(wall <= 1e-9 && air <= 1e-9, "{wall} {air}");
    }
}

#[test]
fn one_period_one_wall_row_count() {
    let (mut spec, c, _) = bundled();
    spec.walls.truncate(1);
    spec.radiation_w_m2k = Vec::new();
    let horizon = Horizon {
        periods: 1,
        dt_seconds: 3600.0,
        first_period: 0,
    };
    let cons = assemble_building_constraints(&spec, &c, &horizon);
    assert_eq!(cons.equalities.len(), 2);
    assert_eq!(cons.bounds.len(), 2);
    assert_eq!(cons.num_vars(), 3);
}

fn max_row_violation(cons: &hydrodispatch::building::BuildingConstraints, state: &BuildingState) -> (f64, f64) {
    let x = cons.pack(state);
    let eq = cons.equalities.iter().fold(0.0_f64, |m, r| {
        let scale = r.terms.iter().map(|&(v, c)| (c * x[v]).abs()).fold(r.rhs.abs(), f64::max).max(1.0);
        m.max(r.residual(&x).abs() / scale)
    });
    let bound = cons.bounds.iter().fold(0.0_f64, |m, r| {
        let v = r.residual(&x);
        m.max(match r.kind {
            RowKind::Ge => (-v).max(0.0),
            RowKind::Le => v.max(0.0),
            RowKind::Eq => v.abs(),
        })
    });
    (eq, bound)
}

#[test]
fn room_held_at_lower_bound() {
    let (spec, c, h) = bundled();
    let target = vec![spec.room_temp_min.at(0); h.periods];
    let state = heat_for_room_temps(&spec, &c, h.dt_seconds, &target).unwrap();
    assert!(state.heat_input.iter().all(|q| *q > 0.0));
    let cons = assemble_building_constraints(&spec, &c, &h);
    let (eq, bound) = max_row_violation(&cons, &state);
    assert!(eq <= 1e-9 && bound <= 1e-9);
    // forward simulation with that heat returns the same room temperatures
    let again = simulate_building(&spec, &c, h.dt_seconds, &state.heat_input).unwrap();
    for tau in 0..h.periods {
        assert!((again.t_room[tau] - 20.0).abs() < 1e-8);
    }
}

#[test]
fn step_advances_one_period() {
    let (spec, c, _) = bundled();
    let state = simulate_building(&spec, &c, 3600.0, &[1500.0, 2500.0]).unwrap();
    let mut head = BuildingState::new(spec.walls.len());
    for i in 0..spec.walls.len() {
        head.t_wall[i].push(state.t_wall[i][0]);
    }
    head.t_room.push(state.t_room[0]);
    head.heat_input.push(1500.0);
    let (walls, room) = building_step(&spec, &c, 3600.0, &head, 1, 2500.0).unwrap();
    assert_eq!(room, state.t_room[1]);
    assert_eq!(walls[1], state.t_wall[1][1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn simulation_satisfies_assembled_rows(heat in prop::collection::vec(0.0..8000.0_f64, 24), b in 0usize..3) {
        let inst = six_bus();
        let spec = &inst.dhs.buildings[b];
        let state = simulate_building(spec, &inst.constants, inst.horizon.dt_seconds, &heat).unwrap();
        let cons = assemble_building_constraints(spec, &inst.constants, &inst.horizon);
        let (eq, _) = max_row_violation(&cons, &state);
        prop_assert!(eq <= 1e-9, "{}", eq);
        let (wall, air) = building_residuals(spec, &inst.constants, inst.horizon.dt_seconds, &state);
        prop_assert!(wall <= 1e-9 && air <= 1e-9);
    }

    #[test]
    fn more_heat_never_cools_the_room(heat in prop::collection::vec(0.0..6000.0_f64, 24), extra in 1.0..2000.0_f64, at in 0usize..24) {
        let (spec, c, h) = bundled();
        let base = simulate_building(&spec, &c, h.dt_seconds, &heat).unwrap();
        let mut more = heat.clone();
        more[at] += extra;
        let warmer = simulate_building(&spec, &c, h.dt_seconds, &more).unwrap();
        for tau in 0..h.periods {
            prop_assert!(warmer.t_room[tau] >= base.t_room[tau] - 1e-9);
        }
        prop_assert!(warmer.t_room[at] > base.t_room[at]);
    }
}
