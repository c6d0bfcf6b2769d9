mod common;

use common::*;
use hydrodispatch::dispatch::{gbd_solve, GbdOptions, ScenarioPlan, run_scenarios};
use hydrodispatch::export::*;
use hydrodispatch::hydraulics::PipeModel;
use hydrodispatch::model::{parse_instance, validate_chp_polygon, NodeRole};
use hydrodispatch::simulation::{simulate_network, simulate_pipe};
use hydrodispatch::Error;

fn header_of(bytes: &[u8]) -> Vec<String> {
    let mut r = csv::Reader::from_reader(bytes);
    r.headers().unwrap().iter().map(str::to_string).collect()
}

fn rows_of(bytes: &[u8]) -> Vec<csv::StringRecord> {
    csv::Reader::from_reader(bytes).records().map(Result::unwrap).collect()
}

#[test]
fn pipe_example_loads() {
    let inst = pipe_example();
    assert_eq!(inst.periods(), 1);
    assert_eq!(inst.horizon.first_period, 12);
    let p = &inst.dhs.pipelines[0];
    assert_eq!(p.length_m, 1750.0);
    assert_eq!(p.area_m2, 0.5);
    assert_eq!(p.water_mass(&inst.constants), 875_000.0);
    assert_eq!(p.history_flow(-1), 185.52);
    assert_eq!(p.history_temp(-3), 80.0);
}

#[test]
fn bundled_instance_shape() {
    let inst = six_bus();
    assert_eq!(inst.periods(), 24);
    assert_eq!(inst.dhs.nodes.len(), 6);
    assert_eq!(inst.dhs.pipelines.len(), 8);
    assert_eq!(inst.dhs.buildings.len(), 3);
    assert_eq!(inst.dhs.nodes.iter().filter(|n| n.role == NodeRole::Source).count(), 1);
    for chp in &inst.units.chp {
        validate_chp_polygon(chp).unwrap();
    }
    let again = parse_instance(&inst.to_json()).unwrap();
    assert_eq!(again, inst);
}

#[test]
fn invalid_fields_are_named() {
    let inst = six_bus();
    let mut v: serde_json::Value = serde_json::from_str(&inst.to_json()).unwrap();
    v["horizon"]["dt_seconds"] = 0.0.into();
    match parse_instance(&v.to_string()) {
        Err(Error::Invalid { field, .. }) => assert!(field.contains("dt"), "{field}"),
        other => panic!("{other:?}"),
    }

    let mut v: serde_json::Value = serde_json::from_str(&inst.to_json()).unwrap();
    v["dhs"]["pipelines"][0]["to"] = "NOWHERE".into();
    assert!(matches!(parse_instance(&v.to_string()), Err(Error::Invalid { .. })));

    let mut v: serde_json::Value = serde_json::from_str(&inst.to_json()).unwrap();
    v["units"]["chp"][0]["cost"][5] = 1e6.into();
    assert!(matches!(parse_instance(&v.to_string()), Err(Error::Invalid { .. })));

    assert!(matches!(parse_instance("{ not json"), Err(Error::Parse { .. })));
    assert!(matches!(
        hydrodispatch::load_instance("/nonexistent/instance.json"),
        Err(Error::Io { .. })
    ));
}

#[test]
fn pipe_csv_round_trips() {
    let inst = pipe_example();
    let rows = simulate_pipe(&inst, "P1").unwrap();
    let mut buf = Vec::new();
    write_pipe_csv(&mut buf, &rows).unwrap();
    assert_eq!(header_of(&buf), PIPE_HEADER);
    let recs = rows_of(&buf);
    assert_eq!(recs.len(), 1);
    assert_eq!(&recs[0][0], "12");
    let wmm: f64 = recs[0][3].parse().unwrap();
    let nm: f64 = recs[0][4].parse().unwrap();
    assert!((wmm - 95.19).abs() < 0.01);
    // the two methods differ only in how the heat loss is timed
    assert!((wmm - nm).abs() < 0.01);
    assert!(simulate_pipe(&inst, "P9").is_err());
}

#[test]
fn network_and_solution_outputs_parse() {
    let inst = six_bus();
    let sim = simulate_network(&inst, PipeModel::Wmm).unwrap();
    let mut buf = Vec::new();
    write_network_csv(&mut buf, &inst, &sim).unwrap();
    assert_eq!(header_of(&buf), NETWORK_HEADER);
    assert_eq!(rows_of(&buf).len(), 6 * 24);

    let (sol, state) = gbd_solve(&inst, &GbdOptions::default()).unwrap();
    let mut heat = Vec::new();
    write_heat_csv(&mut heat, &inst, &sol).unwrap();
    let mut wind = Vec::new();
    write_wind_csv(&mut wind, &inst, &sol).unwrap();
    for (buf, header) in [(heat, &HEAT_HEADER[..]), (wind, &WIND_HEADER[..])] {
        assert_eq!(header_of(&buf), header);
        assert_eq!(rows_of(&buf).len(), 24);
    }
    let mut buf = Vec::new();
    write_building_csv(&mut buf, &inst, &sol, 0).unwrap();
    assert_eq!(header_of(&buf), BUILDING_HEADER);

    let mut buf = Vec::new();
    write_convergence_csv(&mut buf, &state, false).unwrap();
    assert_eq!(header_of(&buf), CONVERGENCE_HEADER);
    let recs = rows_of(&buf);
    assert_eq!(recs.len(), state.trace.len());
    assert!(recs.iter().all(|r| r[5].parse::<f64>().unwrap() == 0.0));

    let json = solution_json(&inst, &sol, Some(&state), false);
    let text = serde_json::to_string(&json).unwrap();
    let back: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["model", "objective", "per_period", "dhs", "trace", "status"] {
        assert!(back.get(key).is_some(), "missing {key}");
    }
    for series in back["per_period"]["p_i"].as_object().unwrap().values() {
        assert_eq!(series.as_array().unwrap().len(), 24);
    }
}

#[test]
fn scenario_csv_without_timing_is_reproducible() {
    let inst = six_bus();
    let plan = ScenarioPlan::Grid { u: vec![1.0, 1.2], v: vec![1.0] };
    let write = || {
        let res = run_scenarios(&inst, &plan, &GbdOptions::default(), false, 2).unwrap();
        let mut buf = Vec::new();
        write_scenarios_csv(&mut buf, &res, false).unwrap();
        buf
    };
    let a = write();
    assert_eq!(header_of(&a), SCENARIO_HEADER);
    assert_eq!(rows_of(&a).len(), 2);
    assert_eq!(a, write());
}
