mod common;

use common::*;
use hydrodispatch::pipe::{self, PipeParams};
use proptest::prelude::*;

#[test]
fn worked_example_weights_and_node_coefficients() {
    let p = table_params(0.12);
    let w = pipe::fill_weights(&p, &TABLE_FLOWS).unwrap();
    let alpha = [1.0, 0.6621, 0.0, 0.0];
    let beta = [1.0, 1.0, 0.5061, 0.0];
    for k in 0..4 {
        assert!((w.alpha[k] - alpha[k]).abs() < 1e-4, "alpha[{k}] = {}", w.alpha[k]);
        assert!((w.beta[k] - beta[k]).abs() < 1e-4, "beta[{k}] = {}", w.beta[k]);
    }
    let s = pipe::nm_state(&p, &TABLE_FLOWS).unwrap();
    let k = [0.0, 0.5214, 0.4786, 0.0];
    for (lag, expect) in k.iter().enumerate() {
        assert!((s.coefficients[lag] - expect).abs() < 1e-4);
    }
    let nm = pipe::nm_outlet(&p, &TABLE_FLOWS, &TABLE_TEMPS, 10.0).unwrap();
    assert_eq!(nm.transit, 1.5 * 3600.0);
    let wmm = pipe::wmm_outlet(&p, &TABLE_FLOWS, &TABLE_TEMPS, 10.0).unwrap();
    assert!((wmm.t_out - 95.194).abs() < 0.01, "{}", wmm.t_out);
}

#[test]
fn constant_inlet_passes_through_lossless() {
    let p = table_params(0.12);
    let w = pipe::fill_weights(&p, &TABLE_FLOWS).unwrap();
    let t = pipe::wmm_lossless(&TABLE_FLOWS, &[73.5; 4], &w).unwrap();
    assert!((t - 73.5).abs() < 1e-12);
}

#[test]
fn one_period_transit() {
    // m Δτ equals the water mass exactly
    let p = PipeParams::new(100.0, 0.5, 0.0, 1e3, 4.2e3, 500.0, 3);
    let m = p.water_mass / p.dt;
    let w = pipe::fill_weights(&p, &[m; 4]).unwrap();
    assert_eq!(w.alpha, vec![1.0, 0.0, 0.0, 0.0]);
    assert_eq!(w.beta, vec![1.0, 1.0, 0.0, 0.0]);
    let nm = pipe::nm_outlet(&p, &[m; 4], &[60.0, 70.0, 80.0, 90.0], 0.0).unwrap();
    assert!((nm.t_lossless - 70.0).abs() < 1e-12);
    let wmm = pipe::wmm_outlet(&p, &[m; 4], &[60.0, 70.0, 80.0, 90.0], 0.0).unwrap();
    assert!((wmm.t_lossless - 70.0).abs() < 1e-12);
}

#[test]
fn steady_outlet_by_hand() {
    let p = table_params(0.12);
    // exponent λL/(c m) evaluated separately: 0.12·1750 / (4200·120.21)
    let exponent: f64 = 210.0 / 504_882.0;
    let expect = 10.0 + 100.0 * (-exponent).exp();
    assert!((pipe::steady_outlet(&p, 120.21, 110.0, 10.0).unwrap() - expect).abs() < 1e-12);
    assert_eq!(pipe::steady_outlet(&p, 120.21, 10.0, 10.0).unwrap(), 10.0);
    assert!((pipe::steady_outlet(&p, 1e9, 80.0, 10.0).unwrap() - 80.0).abs() < 1e-6);
}

#[test]
fn plug_flow_matches_steady_under_constant_conditions() {
    let p = PipeParams::new(1750.0, 0.5, 0.12, 1e3, 4.2e3, 600.0, 20);
    let n = 30;
    let out = pipe::plugflow_oracle(&p, &vec![150.0; n], &vec![95.0; n], &vec![5.0; n], 200).unwrap();
    let steady = pipe::steady_outlet(&p, 150.0, 95.0, 5.0).unwrap();
    for t in out.iter().skip(15) {
        assert!((t - steady).abs() < 1e-4, "{t} vs {steady}");
    }
}

#[test]
fn plug_flow_lossless_equals_water_mass_average() {
    // chronological order, oldest first
    let flows: Vec<f64> = TABLE_FLOWS.iter().rev().copied().collect();
    let temps: Vec<f64> = TABLE_TEMPS.iter().rev().copied().collect();
    let out = pipe::plugflow_oracle(&table_params(0.0), &flows, &temps, &[10.0; 4], 10_000).unwrap();
    let w = pipe::fill_weights(&table_params(0.0), &TABLE_FLOWS).unwrap();
    let wmm = pipe::wmm_lossless(&TABLE_FLOWS, &TABLE_TEMPS, &w).unwrap();
    assert!((out[3] - wmm).abs() < 1e-3, "{} vs {wmm}", out[3]);
}

#[test]
fn inlet_step_arrives_after_residence_time() {
    let p = PipeParams::new(600.0, 0.5, 0.0, 1e3, 4.2e3, 100.0, 10);
    // residence ρAL/m = 300000 / 1000 = 300 s, three periods
    let n = 12;
    let temps: Vec<f64> = (0..n).map(|t| if t < 4 { 50.0 } else { 90.0 }).collect();
    let out = pipe::plugflow_oracle(&p, &vec![1000.0; n], &temps, &vec![0.0; n], 1000).unwrap();
    for (t, v) in out.iter().enumerate() {
        let expect = if t < 7 { 50.0 } else { 90.0 };
        assert!((v - expect).abs() < 1e-6, "period {t}: {v}");
    }
}

#[test]
fn shallow_window_and_bad_flow_rejected() {
    let p = table_params(0.12);
    assert!(matches!(
        pipe::fill_weights(&p, &[120.0, 10.0, 10.0, 10.0]),
        Err(pipe::FillError::WindowTooShallow { .. })
    ));
    assert!(matches!(
        pipe::fill_weights(&p, &[120.0, -1.0, 200.0, 200.0]),
        Err(pipe::FillError::NonPositiveFlow { lag: 1 })
    ));
    assert!(matches!(pipe::fill_weights(&p, &[120.0; 3]), Err(pipe::FillError::WindowLength { .. })));
}

/// Random window whose past periods hold more water than the pipe.
fn window() -> impl Strategy<Value = (PipeParams, Vec<f64>, Vec<f64>)> {
    (1usize..8)
        .prop_flat_map(|depth| {
            (
                prop::collection::vec(20.0..400.0_f64, depth + 1),
                prop::collection::vec(40.0..120.0_f64, depth + 1),
                0.02..0.98_f64,
                0.0..2.0_f64,
            )
        })
        .prop_map(|(flows, temps, frac, lambda)| {
            let dt = 900.0;
            let past: f64 = flows[1..].iter().map(|m| m * dt).sum();
            let water = frac * past;
            let area = 0.3;
            let length = water / (1e3 * area);
            let p = PipeParams::new(length, area, lambda, 1e3, 4.2e3, dt, flows.len() - 1);
            (p, flows, temps)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn weights_are_closed_step_patterns((p, flows, _t) in window()) {
        let w = pipe::fill_weights(&p, &flows).unwrap();
        let masses: Vec<f64> = flows.iter().map(|m| m * p.dt).collect();
        for v in [&w.alpha, &w.beta] {
            for k in 0..v.len() - 1 {
                prop_assert!((1.0 - v[k]) * v[k + 1] == 0.0);
                prop_assert!((0.0..=1.0).contains(&v[k]));
            }
        }
        let a: f64 = w.alpha.iter().zip(&masses).map(|(a, m)| a * m).sum();
        let b: f64 = w.beta.iter().zip(&masses).skip(1).map(|(b, m)| b * m).sum();
        prop_assert!(rel_err(a, p.water_mass) < 1e-10);
        prop_assert!(rel_err(b, p.water_mass) < 1e-10);
        let outflow: f64 = w.outflow().iter().zip(&masses).map(|(d, m)| d * m).sum();
        prop_assert!(rel_err(outflow, masses[0]) < 1e-10);
        for k in 0..w.alpha.len() {
            prop_assert!(w.beta[k] >= w.alpha[k]);
        }
    }

    #[test]
    fn weights_match_pattern_enumeration((p, flows, _t) in window()) {
        let w = pipe::fill_weights(&p, &flows).unwrap();
        let masses: Vec<f64> = flows.iter().map(|m| m * p.dt).collect();
        let alphas = enumerate_fill(p.water_mass, &masses);
        prop_assert_eq!(alphas.len(), 1);
        let betas = enumerate_fill(p.water_mass, &masses[1..]);
        prop_assert_eq!(betas.len(), 1);
        for k in 0..masses.len() {
            prop_assert!((w.alpha[k] - alphas[0][k]).abs() < 1e-12);
            let b = if k == 0 { 1.0 } else { betas[0][k - 1] };
            prop_assert!((w.beta[k] - b).abs() < 1e-12);
        }
    }

    #[test]
    fn water_mass_and_node_methods_agree((p, flows, temps) in window()) {
        let wmm = pipe::wmm_outlet(&p, &flows, &temps, 5.0).unwrap();
        let nm = pipe::nm_outlet(&p, &flows, &temps, 5.0).unwrap();
        prop_assert!(rel_err(wmm.t_lossless, nm.t_lossless) <= 1e-9);
    }

    #[test]
    fn lossless_outlet_is_a_convex_combination((p, flows, temps) in window()) {
        let w = pipe::fill_weights(&p, &flows).unwrap();
        let t = pipe::wmm_lossless(&flows, &temps, &w).unwrap();
        let lo = temps.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = temps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(t >= lo - 1e-9 && t <= hi + 1e-9);
    }
}
