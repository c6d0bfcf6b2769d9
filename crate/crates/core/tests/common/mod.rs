#![allow(dead_code)]

use std::path::PathBuf;

use hydrodispatch::pipe::PipeParams;
use hydrodispatch::{load_instance, DispatchInstance};

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn six_bus() -> DispatchInstance {
    load_instance(data("six-bus.json")).expect("bundled six-bus instance")
}

pub fn pipe_example() -> DispatchInstance {
    load_instance(data("pipe-example.json")).expect("bundled pipe example")
}

/// Worked pipeline example: 1750 m, 0.5 m², one hour periods, window of three past periods.
pub fn table_params(lambda: f64) -> PipeParams {
    PipeParams::new(1750.0, 0.5, lambda, 1e3, 4.2e3, 3600.0, 3)
}

/// Flows and inlet temperatures of the worked example by lag (periods 12, 11, 10, 9).
pub const TABLE_FLOWS: [f64; 4] = [120.21, 185.52, 113.68, 116.10];
pub const TABLE_TEMPS: [f64; 4] = [110.0, 100.0, 90.0, 80.0];

/// Fill weights by exhaustive search over step patterns `(1,…,1,x,0,…,0)`.
/// Returns every pattern that closes the mass balance with `x ∈ (0, 1]`.
pub fn enumerate_fill(target: f64, masses: &[f64]) -> Vec<Vec<f64>> {
    let n = masses.len();
    let mut found = Vec::new();
    for code in 0u32..(1 << n) {
        let z: Vec<bool> = (0..n).map(|k| code & (1 << k) != 0).collect();
        // only non-increasing binary vectors are step patterns
        if z.windows(2).any(|w| !w[0] && w[1]) {
            continue;
        }
        let ones = z.iter().filter(|&&b| b).count();
        let full: f64 = masses[..ones].iter().sum();
        let rest = target - full;
        if ones == n {
            if rest.abs() <= 1e-9 * target {
                found.push(vec![1.0; n]);
            }
            continue;
        }
        let x = rest / masses[ones];
        if x > 1e-12 && x < 1.0 - 1e-12 {
            let mut w = vec![0.0; n];
            w[..ones].iter_mut().for_each(|v| *v = 1.0);
            w[ones] = x;
            found.push(w);
        } else if (x - 1.0).abs() <= 1e-12 {
            let mut w = vec![0.0; n];
            w[..=ones].iter_mut().for_each(|v| *v = 1.0);
            found.push(w);
        }
    }
    found.sort_by(|a, b| a.partial_cmp(b).unwrap());
    found.dedup();
    found
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

pub fn flatten(flows: &[Vec<f64>]) -> Vec<f64> {
    flows.iter().flatten().copied().collect()
}

pub fn unflatten(m: &[f64], periods: usize) -> Vec<Vec<f64>> {
    m.chunks(periods).map(|c| c.to_vec()).collect()
}

/// Relative error between the cut gradient along `direction` and a central
/// difference of `f(x) + multipliersᵀ residual(x, m)` with `x` and the
/// multipliers held at the subproblem optimum. `None` when the dispatch QP
/// is infeasible at `m`.
pub fn cut_directional_error(
    instance: &DispatchInstance,
    m: &[f64],
    direction: &[f64],
    options: &hydrodispatch::dispatch::DispatchOptions,
) -> Option<f64> {
    use hydrodispatch::dispatch::{build_subproblem, solve_at, Cut, SpOutcome};
    let periods = instance.periods();
    let SpOutcome::Optimal { sub, qp, .. } = solve_at(instance, &unflatten(m, periods), options).unwrap() else {
        return None;
    };
    let cut = Cut::from_subproblem(instance, 0, &sub, &qp);
    let lagrangian = |step: f64| {
        let shifted: Vec<f64> = m.iter().zip(direction).map(|(a, d)| a + step * d).collect();
        let s = build_subproblem(instance, &unflatten(&shifted, periods), options).unwrap();
        s.problem.objective(&qp.x) + s.weighted_residual(&qp.x, &qp.eq_duals, &qp.ineq_duals)
    };
    let h = 1e-5 * m.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let fd = (lagrangian(h) - lagrangian(-h)) / (2.0 * h);
    let analytic: f64 = cut.gradient.iter().zip(direction).map(|(g, d)| g * d).sum();
    Some((analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-3))
}

/// Random flow point inside the flow domain.
pub fn random_flow_point(instance: &DispatchInstance, rng: &mut impl rand::Rng) -> Vec<f64> {
    use hydrodispatch::dispatch::{project_flows, FlowDomain};
    let domain = FlowDomain::new(instance);
    let target: Vec<f64> = (0..domain.len())
        .map(|i| rng.gen_range(domain.lower[i]..=domain.upper[i]))
        .collect();
    project_flows(&domain, &target).unwrap()
}
