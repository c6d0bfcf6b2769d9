//! CSV and JSON writers for simulation and dispatch results.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use serde_json::{json, Value};

use crate::dispatch::{DispatchSolution, GbdState, ScenarioResult};
use crate::error::{Error, Result};
use crate::model::DispatchInstance;
use crate::simulation::{NetworkSimulation, PipeSimRow};

fn csv_error(e: csv::Error) -> Error {
    Error::Io {
        path: "<csv>".into(),
        source: std::io::Error::other(e),
    }
}

fn write_rows<W: Write, R: Serialize>(out: W, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<csv>".into(),
        source,
    })
}

pub const PIPE_HEADER: [&str; 8] = [
    "period",
    "mass_flow_kg_s",
    "t_in_c",
    "t_out_wmm_c",
    "t_out_nm_c",
    "t_out_steady_c",
    "transit_wmm_s",
    "transit_nm_s",
];
pub const NETWORK_HEADER: [&str; 4] = ["period", "node_id", "t_n_c", "h_n"];
pub const BUILDING_HEADER: [&str; 4] = ["period", "t_out_c", "t_room_c", "heat_input_w"];
pub const SCENARIO_HEADER: [&str; 8] = ["scenario", "u", "v", "converged", "iterations", "wall_ms", "cost", "curtailment"];
pub const HEAT_HEADER: [&str; 3] = ["period", "heat_output_mw", "heat_load_mw"];
pub const WIND_HEADER: [&str; 4] = ["period", "available_mw", "dispatched_mw", "curtailment_mw"];
pub const CONVERGENCE_HEADER: [&str; 6] = ["r", "ubd", "lbd", "gap", "sp_status", "wall_ms"];

pub fn write_pipe_csv<W: Write>(out: W, rows: &[PipeSimRow]) -> Result<()> {
    write_rows(out, &PIPE_HEADER, rows)
}

pub fn write_network_csv<W: Write>(out: W, instance: &DispatchInstance, sim: &NetworkSimulation) -> Result<()> {
    let first = instance.horizon.first_period;
    let mut rows = Vec::new();
    for tau in 0..instance.periods() {
        for (n, node) in instance.dhs.nodes.iter().enumerate() {
            rows.push((first + tau as i64, node.id.as_str(), sim.state.t_node[n][tau], sim.h_node[n][tau]));
        }
    }
    write_rows(out, &NETWORK_HEADER, rows)
}

/// Per-room building trajectory of one building of a dispatch.
pub fn write_building_csv<W: Write>(out: W, instance: &DispatchInstance, sol: &DispatchSolution, building: usize) -> Result<()> {
    let spec = &instance.dhs.buildings[building];
    let b = &sol.buildings[building];
    let first = instance.horizon.first_period;
    let rows = (0..instance.periods()).map(|t| (first + t as i64, spec.outdoor_temp_c.at(t), b.t_room[t], b.heat_w[t]));
    write_rows(out, &BUILDING_HEADER, rows)
}

/// `wall_ms` is written as 0 when `timing` is off, so reruns compare byte for byte.
pub fn write_scenarios_csv<W: Write>(out: W, results: &[ScenarioResult], timing: bool) -> Result<()> {
    let rows = results.iter().map(|r| {
        (
            r.scenario,
            r.u,
            r.v,
            r.converged,
            r.iterations,
            if timing { r.wall_ms } else { 0.0 },
            r.cost,
            r.curtailment,
        )
    });
    write_rows(out, &SCENARIO_HEADER, rows)
}

pub fn write_heat_csv<W: Write>(out: W, instance: &DispatchInstance, sol: &DispatchSolution) -> Result<()> {
    let first = instance.horizon.first_period;
    let rows = sol
        .heat_output()
        .into_iter()
        .zip(sol.heat_load(instance))
        .enumerate()
        .map(|(t, (q, l))| (first + t as i64, q, l));
    write_rows(out, &HEAT_HEADER, rows)
}

pub fn write_wind_csv<W: Write>(out: W, instance: &DispatchInstance, sol: &DispatchSolution) -> Result<()> {
    let first = instance.horizon.first_period;
    let rows = (0..sol.periods()).map(|t| {
        let avail: f64 = sol.renewable.iter().map(|r| r.available_mw[t]).sum();
        let used: f64 = sol.renewable.iter().map(|r| r.p_mw[t]).sum();
        (first + t as i64, avail, used, avail - used)
    });
    write_rows(out, &WIND_HEADER, rows)
}

pub fn write_convergence_csv<W: Write>(out: W, state: &GbdState, timing: bool) -> Result<()> {
    let mut best = f64::INFINITY;
    let mut lbd = f64::NEG_INFINITY;
    let rows: Vec<_> = state
        .trace
        .iter()
        .map(|row| {
            if let Some(u) = row.ubd {
                best = best.min(u);
            }
            lbd = lbd.max(row.lbd);
            let gap = best.is_finite().then(|| (best - lbd.max(0.0)) / best.abs().max(1e-9));
            (
                row.r,
                row.ubd,
                row.lbd,
                gap,
                row.sp_status.as_str(),
                if timing { row.wall_ms } else { 0.0 },
            )
        })
        .collect();
    write_rows(out, &CONVERGENCE_HEADER, rows)
}

fn by_id<'a>(items: impl IntoIterator<Item = (&'a str, Value)>) -> Value {
    Value::Object(items.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

/// Solution document with `objective`, `per_period`, `dhs` and `trace` blocks.
pub fn solution_json(instance: &DispatchInstance, sol: &DispatchSolution, state: Option<&GbdState>, timing: bool) -> Value {
    let dhs = &instance.dhs;
    let p_i = by_id(
        sol.chp
            .iter()
            .map(|u| (u.id.as_str(), json!(u.p_mw)))
            .chain(sol.thermal.iter().map(|u| (u.id.as_str(), json!(u.p_mw)))),
    );
    let q_i = by_id(sol.chp.iter().map(|u| (u.id.as_str(), json!(u.q_mw))));
    let p_re = by_id(sol.renewable.iter().map(|r| (r.id.as_str(), json!(r.p_mw))));
    let curtailment = by_id(sol.renewable.iter().map(|r| (r.id.as_str(), json!(r.curtailment_mw))));
    let reserves = by_id(
        sol.thermal
            .iter()
            .map(|u| (u.id.as_str(), json!({"up": u.reserve_up_mw, "down": u.reserve_down_mw}))),
    );
    let pipes = || dhs.pipelines.iter().map(|p| p.id.as_str());
    let nodes = || dhs.nodes.iter().map(|n| n.id.as_str());
    let m_b = by_id(pipes().zip(&sol.dhs.mass_flow).map(|(id, v)| (id, json!(v))));
    let t_n = by_id(nodes().zip(&sol.dhs.t_node).map(|(id, v)| (id, json!(v))));
    let h_n = by_id(nodes().zip(&sol.dhs.h_node).map(|(id, v)| (id, json!(v))));
    let weights = by_id(pipes().zip(&sol.dhs.weights).map(|(id, v)| (id, json!(v))));
    let trace: Vec<Value> = state
        .map(|s| {
            s.trace
                .iter()
                .map(|row| {
                    json!({
                        "r": row.r,
                        "ubd": row.ubd,
                        "lbd": row.lbd,
                        "sp_status": row.sp_status,
                        "wall_ms": if timing { row.wall_ms } else { 0.0 },
                    })
                })
                .collect()
        })
        .unwrap_or_default();
    let mut doc = BTreeMap::new();
    doc.insert("model", json!(sol.model));
    doc.insert("objective", json!(sol.objective));
    doc.insert(
        "per_period",
        json!({"p_i": p_i, "q_i": q_i, "p_re": p_re, "curtailment": curtailment, "reserves": reserves}),
    );
    doc.insert("dhs", json!({"m_b": m_b, "t_n": t_n, "h_n": h_n, "weights": weights}));
    doc.insert("trace", json!(trace));
    if let Some(s) = state {
        doc.insert(
            "status",
            json!({"status": s.status, "iterations": s.iterations, "ubd": s.ubd, "lbd": s.lbd, "gap": s.gap}),
        );
    }
    json!(doc)
}

pub const COMPARISON_HEADER: [&str; 7] = [
    "period",
    "heat_output_steady_mw",
    "heat_output_dynamic_mw",
    "heat_load_steady_mw",
    "heat_load_dynamic_mw",
    "wind_steady_mw",
    "wind_dynamic_mw",
];

/// Heat and wind profiles of two dispatches of the same instance.
pub fn write_comparison_csv<W: Write>(
    out: W,
    instance: &DispatchInstance,
    steady: &DispatchSolution,
    dynamic: &DispatchSolution,
) -> Result<()> {
    let first = instance.horizon.first_period;
    let wind = |s: &DispatchSolution, t: usize| -> f64 { s.renewable.iter().map(|r| r.p_mw[t]).sum() };
    let (qs, qd) = (steady.heat_output(), dynamic.heat_output());
    let (ls, ld) = (steady.heat_load(instance), dynamic.heat_load(instance));
    let rows = (0..instance.periods()).map(|t| (first + t as i64, qs[t], qd[t], ls[t], ld[t], wind(steady, t), wind(dynamic, t)));
    write_rows(out, &COMPARISON_HEADER, rows)
}
