mod common;

use common::*;
use hydrodispatch::hydraulics::{
    continuity_residual, heat_ledger, mixing_residual, propagate_network, pressure_residual, pump_power,
    solve_pressures, PipeModel, Topology,
};
use hydrodispatch::simulation::{scheduled_flows, scheduled_injections, simulate_network, simulate_pipe};
use hydrodispatch::{parse_instance, pipe, DispatchInstance};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[test]
fn pressure_examples() {
    assert_eq!(pressure_residual(50.0, 40.0, 0.1, 10.0, 0.0), 0.0);
    assert_eq!(pressure_residual(7.0, 7.0, 3.0, 0.0, 0.0), 0.0);
    assert_eq!(pressure_residual(1e5, 1e5, 10.0, 100.0, 1e5), 0.0);
}

#[test]
fn pump_power_examples() {
    assert_eq!(pump_power(100.0, 0.0, 1e3, 0.8).unwrap(), 0.0);
    assert!((pump_power(100.0, 1e5, 1e3, 1.0).unwrap() - 0.01).abs() < 1e-15);
    let one = pump_power(80.0, 3e5, 1e3, 0.7).unwrap();
    let two = pump_power(160.0, 3e5, 1e3, 0.7).unwrap();
    assert!((two - 2.0 * one).abs() < 1e-15);
    assert!(pump_power(80.0, 3e5, 1e3, 0.0).is_err());
    assert!(pump_power(80.0, 3e5, 1e3, 1.2).is_err());
}

#[test]
fn mixing_examples() {
    let c = 4.2e3;
    // pass-through: t_n = t_e
    assert_eq!(mixing_residual(c, &[(50.0, 72.0)], 50.0, 72.0, 0.0), 0.0);
    // equal-mass mixing of 80 and 100
    assert!(mixing_residual(c, &[(30.0, 80.0), (30.0, 100.0)], 60.0, 90.0, 0.0).abs() < 1e-9);
    // load node extracting c·100·(90 − 60)
    assert!(mixing_residual(c, &[(100.0, 90.0)], 100.0, 60.0, c * 100.0 * (60.0 - 90.0)).abs() < 1e-9);
}

/// Random trees with random flows and pump heads; pressures by a walk from
/// node 0 satisfy every pipe relation.
#[test]
fn traversal_pressures_close_every_pipe() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.gen_range(2..12);
        let parent: Vec<usize> = (1..n).map(|v| rng.gen_range(0..v)).collect();
        let pipes: Vec<(usize, usize, f64, f64, f64)> = parent
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let (f, t) = if rng.gen_bool(0.5) { (p, i + 1) } else { (i + 1, p) };
                let head = if rng.gen_bool(0.3) { rng.gen_range(0.0..5e5) } else { 0.0 };
                (f, t, rng.gen_range(0.1..20.0), rng.gen_range(1.0..300.0), head)
            })
            .collect();
        let mut h = vec![f64::NAN; n];
        h[0] = 8e5;
        let mut changed = true;
        while changed {
            changed = false;
            for &(f, t, k, m, head) in &pipes {
                if h[f].is_finite() && !h[t].is_finite() {
                    h[t] = h[f] - k * m * m + head;
                    changed = true;
                } else if h[t].is_finite() && !h[f].is_finite() {
                    h[f] = h[t] + k * m * m - head;
                    changed = true;
                }
            }
        }
        for &(f, t, k, m, head) in &pipes {
            let r = pressure_residual(h[f], h[t], k, m, head);
            assert!(r.abs() <= 1e-10 * h[f].abs().max(1.0), "{r}");
        }
    }
}

#[test]
fn chain_network_reproduces_pipe_outlet() {
    let inst = pipe_example();
    let flows = scheduled_flows(&inst).unwrap();
    let q = scheduled_injections(&inst);
    let state = propagate_network(&inst, &flows, &q, PipeModel::Wmm).unwrap();
    let direct = pipe::wmm_outlet(&table_params(0.12), &TABLE_FLOWS, &TABLE_TEMPS, 10.0).unwrap();
    assert!((state.t_node[1][0] - direct.t_out).abs() < 1e-12);
    assert!((state.t_node[1][0] - 95.19).abs() < 0.01);
    assert_eq!(state.t_node[0][0], 110.0);
}

#[test]
fn pipe_simulation_rows_follow_the_schedule() {
    let inst = pipe_example();
    let rows = simulate_pipe(&inst, "P1").unwrap();
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!(r.period, 12);
    assert_eq!(r.mass_flow_kg_s, 120.21);
    assert_eq!(r.t_in_c, 110.0);
    assert!((r.t_out_wmm_c - 95.19).abs() < 0.01);
    assert!((r.t_out_nm_c - r.t_out_wmm_c).abs() < 0.01);
    assert_eq!(r.transit_nm_s, 5400.0);
    assert!(simulate_pipe(&inst, "P9").is_err());
}

fn mixing_check(inst: &DispatchInstance, flows: &[Vec<f64>], q: &[Vec<f64>], model: PipeModel) -> f64 {
    let state = propagate_network(inst, flows, q, model).unwrap();
    let topo = Topology::new(inst);
    let c = inst.constants.c;
    let mut worst = 0.0_f64;
    for tau in 0..inst.periods() {
        for n in 0..topo.nodes() {
            if topo.inflow[n].is_empty() {
                continue;
            }
            let inflows: Vec<(f64, f64)> = topo.inflow[n].iter().map(|&b| (flows[b][tau], state.t_out[b][tau])).collect();
            let mass = topo.mixing_mass(n, |b| flows[b][tau]);
            let r = mixing_residual(c, &inflows, mass, state.t_node[n][tau], q[n][tau]);
            let scale = c * mass * state.t_node[n][tau].abs().max(1.0);
            worst = worst.max(r.abs() / scale);
        }
    }
    worst
}

#[test]
fn bundled_network_mixing_closes() {
    let inst = six_bus();
    let flows = scheduled_flows(&inst).unwrap();
    let q = scheduled_injections(&inst);
    assert_eq!(continuity_residual(&Topology::new(&inst), |b| flows[b][0]), 0.0);
    for model in [PipeModel::Wmm, PipeModel::Nm, PipeModel::Steady] {
        let worst = mixing_check(&inst, &flows, &q, model);
        assert!(worst <= 1e-9, "{model:?}: {worst}");
    }
}

#[test]
fn bundled_network_heat_ledger_balances() {
    let inst = six_bus();
    let flows = scheduled_flows(&inst).unwrap();
    let q = scheduled_injections(&inst);
    let state = propagate_network(&inst, &flows, &q, PipeModel::Wmm).unwrap();
    let ledger = heat_ledger(&inst, &flows, &q, &state).unwrap();
    assert!(ledger.pipe_losses > 0.0);
    assert!(ledger.imbalance().abs() <= 5e-3 * ledger.injected, "{ledger:?}");
}

#[test]
fn outflow_pipes_start_at_node_temperature() {
    let inst = six_bus();
    let sim = simulate_network(&inst, PipeModel::Wmm).unwrap();
    let topo = Topology::new(&inst);
    // WMM with every past inlet replaced by the node temperature history
    for (b, spec) in inst.dhs.pipelines.iter().enumerate() {
        let p = spec.params(&inst.constants, inst.horizon.dt_seconds);
        for tau in p.depth..inst.periods() {
            let flows: Vec<f64> = (0..=p.depth).map(|k| sim.flows[b][tau - k]).collect();
            let temps: Vec<f64> = (0..=p.depth).map(|k| sim.state.t_node[topo.from[b]][tau - k]).collect();
            let r = pipe::wmm_outlet(&p, &flows, &temps, spec.ambient_c.at(tau)).unwrap();
            assert!((r.t_out - sim.state.t_out[b][tau]).abs() < 1e-9);
        }
    }
}

#[test]
fn bundled_pressures_respect_pipe_relations() {
    let inst = six_bus();
    let sim = simulate_network(&inst, PipeModel::Wmm).unwrap();
    let topo = Topology::new(&inst);
    for tau in [0, 11, 23] {
        let m: Vec<f64> = sim.flows.iter().map(|f| f[tau]).collect();
        let (h, heads) = solve_pressures(&inst, &m).unwrap().expect("pumps can deliver the schedule");
        for (b, spec) in inst.dhs.pipelines.iter().enumerate() {
            let r = pressure_residual(h[topo.from[b]], h[topo.to[b]], spec.resistance, m[b], heads[b]);
            assert!(r.abs() < 1e-3, "pipe {}: {r} Pa", spec.id);
            if let Some(pump) = &spec.pump {
                assert!(heads[b] >= pump.head_bounds[0] - 1e-3 && heads[b] <= pump.head_bounds[1] + 1e-3);
            }
            assert_eq!(h[topo.from[b]], sim.h_node[topo.from[b]][tau].unwrap());
        }
    }
}

/// Two nodes joined by a supply and a return pipe, both short enough that
/// part of the current inflow leaves within the period.
fn short_loop(periods: usize) -> DispatchInstance {
    let pipe = |id: &str, from: &str, to: &str, t: f64| {
        json!({
            "id": id, "from": from, "to": to, "length_m": 200.0, "area_m2": 0.1,
            "heat_transfer_w_mk": 0.5, "mass_flow_bounds": [20.0, 80.0], "ambient_c": 5.0,
            "history_depth": 2,
            "history": {"mass_flow": [50.0, 50.0], "inlet_temp": [t, t]},
            "schedule": {"mass_flow": 50.0}
        })
    };
    let doc = json!({
        "horizon": {"periods": periods, "dt_seconds": 900.0},
        "dhs": {
            "nodes": [
                {"id": "S", "role": "source", "temp_bounds": [0.0, 150.0], "pressure_bounds": [0.0, 1e7], "heat_injection_mw": 6.0},
                {"id": "L", "role": "load", "temp_bounds": [0.0, 150.0], "pressure_bounds": [0.0, 1e7], "heat_injection_mw": -5.9}
            ],
            "pipelines": [pipe("SUP", "S", "L", 90.0), pipe("RET", "L", "S", 60.0)]
        }
    });
    parse_instance(&doc.to_string()).unwrap()
}

#[test]
fn zero_delay_loop_is_solved_jointly() {
    let inst = short_loop(6);
    let flows = scheduled_flows(&inst).unwrap();
    let q = scheduled_injections(&inst);
    let worst = mixing_check(&inst, &flows, &q, PipeModel::Wmm);
    assert!(worst <= 1e-9, "{worst}");
}

#[test]
fn loop_without_delay_or_losses_is_singular() {
    let mut inst = short_loop(1);
    // steady transport is instantaneous and the loop has no loss: the
    // balance only fixes temperatures up to a constant
    for p in &mut inst.dhs.pipelines {
        p.heat_transfer_w_mk = 0.0;
    }
    for n in &mut inst.dhs.nodes {
        n.heat_injection_mw = None;
    }
    let flows = scheduled_flows(&inst).unwrap();
    let q = scheduled_injections(&inst);
    assert!(propagate_network(&inst, &flows, &q, PipeModel::Steady).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Perturbed schedules on the bundled network keep every mixing balance closed.
    #[test]
    fn random_schedules_keep_mixing_closed(scale in prop::collection::vec(0.95..1.05_f64, 24), seed in 0u64..1000) {
        let inst = six_bus();
        let mut flows = scheduled_flows(&inst).unwrap();
        let topo = Topology::new(&inst);
        let n1 = inst.dhs.node_index("N2").unwrap();
        // scale branch flows per period and rebuild the trunk from continuity
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for tau in 0..inst.periods() {
            for &b in &topo.outflow[n1] {
                flows[b][tau] *= scale[tau] * rng.gen_range(0.99..1.01);
            }
            let total: f64 = topo.outflow[n1].iter().map(|&b| flows[b][tau]).sum();
            for &b in &topo.outflow[n1] {
                let ret = topo.outflow[topo.to[b]][0];
                flows[ret][tau] = flows[b][tau];
            }
            for (b, spec) in inst.dhs.pipelines.iter().enumerate() {
                if spec.id == "P1" || spec.id == "P8" {
                    flows[b][tau] = total;
                }
            }
        }
        let q = scheduled_injections(&inst);
        prop_assert!(mixing_check(&inst, &flows, &q, PipeModel::Wmm) <= 1e-9);
    }
}
