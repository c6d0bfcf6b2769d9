use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use hydrodispatch::dispatch::{
    check_feasibility, gbd_solve, refine_local, run_scenarios, solve_steady, DispatchSolution, GbdOptions, GbdState,
    RefineOptions, ScenarioPlan,
};
use hydrodispatch::hydraulics::PipeModel;
use hydrodispatch::{export, load_instance, simulation, DispatchInstance};

/// District heating simulation and combined heat and power dispatch.
#[derive(Debug, Parser)]
#[command(name = "hydrodispatch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory for CSV and JSON files.
    #[arg(long, global = true, default_value = "hydrodispatch-out")]
    out: PathBuf,
    /// Print a machine-readable summary instead of the human one.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Wmm,
    Nm,
    Steady,
}

impl From<Method> for PipeModel {
    fn from(m: Method) -> Self {
        match m {
            Method::Wmm => PipeModel::Wmm,
            Method::Nm => PipeModel::Nm,
            Method::Steady => PipeModel::Steady,
        }
    }
}

#[derive(Debug, clap::Args)]
struct SolveArgs {
    /// Relative gap at which decomposition stops.
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Polish the decomposition result with a local descent over the flows.
    #[arg(long)]
    refine: bool,
    /// Count pump electricity as load on the power grid.
    #[arg(long)]
    pump_load: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Outlet temperatures of one pipeline under its flow schedule, all three models.
    SimulatePipe {
        instance: PathBuf,
        /// Pipeline id; defaults to the first pipeline.
        #[arg(long)]
        pipe: Option<String>,
        /// Model shown in the summary.
        #[arg(long, value_enum, default_value = "wmm")]
        method: Method,
    },
    /// Node temperatures and pressures under the scheduled flows and fixed injections.
    SimulateNetwork {
        instance: PathBuf,
        #[arg(long, value_enum, default_value = "wmm")]
        method: Method,
    },
    /// Dispatch with pipeline transport delay by decomposition over mass flows.
    Dispatch {
        instance: PathBuf,
        #[arg(long, value_enum, default_value = "wmm")]
        method: Method,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Dispatch with the steady heating network model.
    Steady {
        instance: PathBuf,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Steady and dynamic dispatch side by side.
    Compare {
        instance: PathBuf,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Dispatch under scaled wind availability and outdoor temperature.
    Scenarios {
        instance: PathBuf,
        /// Scenario grid, e.g. `u=1,1.1` or `u=1,1.1;v=1,0.9`.
        #[arg(long, conflicts_with = "montecarlo")]
        grid: Option<String>,
        /// Number of random wind scenarios.
        #[arg(long)]
        montecarlo: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Write wall times as 0 so reruns are byte-identical.
        #[arg(long)]
        no_timing: bool,
        #[command(flatten)]
        solve: SolveArgs,
    },
}

/// Errors that map to the validation exit code.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn is_validation(e: &hydrodispatch::Error) -> bool {
    matches!(
        e,
        hydrodispatch::Error::Io { .. } | hydrodispatch::Error::Parse(_) | hydrodispatch::Error::Invalid { .. }
    )
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match e.downcast_ref::<hydrodispatch::Error>() {
        Some(err) if is_validation(err) => 2,
        _ => 3,
    }
}

fn load(path: &Path) -> Result<DispatchInstance> {
    if !path.exists() {
        return Err(Usage(format!("instance file {} does not exist", path.display())).into());
    }
    Ok(load_instance(path)?)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn gbd_options(args: &SolveArgs, model: PipeModel) -> Result<GbdOptions> {
    if !(args.epsilon > 0.0) {
        return Err(Usage("--epsilon must be positive".into()).into());
    }
    let mut opts = GbdOptions {
        epsilon: args.epsilon,
        max_iter: args.max_iter,
        ..Default::default()
    };
    opts.dispatch.model = model;
    opts.dispatch.pump_load = args.pump_load;
    Ok(opts)
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Usage(format!("bad number {v:?} in --grid")).into())
        })
        .collect()
}

fn parse_grid(text: &str) -> Result<ScenarioPlan> {
    let mut u = vec![1.0];
    let mut v = vec![1.0];
    for part in text.split(';').filter(|p| !p.trim().is_empty()) {
        match part.split_once('=') {
            Some(("u", vals)) => u = parse_list(vals)?,
            Some(("v", vals)) => v = parse_list(vals)?,
            _ => return Err(Usage(format!("--grid entry {part:?} must be u=... or v=...")).into()),
        }
    }
    Ok(ScenarioPlan::Grid { u, v })
}

struct Solved {
    solution: DispatchSolution,
    state: GbdState,
    refined: bool,
}

fn solve(instance: &DispatchInstance, args: &SolveArgs, model: PipeModel) -> Result<Solved> {
    if model == PipeModel::Nm {
        return Err(Usage("--method nm is available for simulation only".into()).into());
    }
    let opts = gbd_options(args, model)?;
    let (mut solution, state) = if model == PipeModel::Steady {
        solve_steady(instance, &opts)?
    } else {
        gbd_solve(instance, &opts)?
    };
    let mut refined = false;
    if args.refine {
        let ropts = RefineOptions {
            dispatch: opts.dispatch.clone(),
            ..Default::default()
        };
        let outcome = refine_local(instance, &solution, &ropts)?;
        refined = outcome.improved;
        solution = outcome.solution;
    }
    Ok(Solved {
        solution,
        state,
        refined,
    })
}

fn write_solution(dir: &Path, instance: &DispatchInstance, s: &Solved) -> Result<()> {
    let doc = export::solution_json(instance, &s.solution, Some(&s.state), true);
    serde_json::to_writer_pretty(create(dir, "solution.json")?, &doc)?;
    export::write_heat_csv(create(dir, "heat_output_vs_load.csv")?, instance, &s.solution)?;
    export::write_wind_csv(create(dir, "wind_dispatch.csv")?, instance, &s.solution)?;
    export::write_convergence_csv(create(dir, "convergence.csv")?, &s.state, true)?;
    for (i, b) in instance.dhs.buildings.iter().enumerate() {
        export::write_building_csv(create(dir, &format!("building_{}.csv", b.id))?, instance, &s.solution, i)?;
    }
    Ok(())
}

fn summary(instance: &DispatchInstance, s: &Solved) -> serde_json::Value {
    let report = check_feasibility(instance, &s.solution, 1e-4);
    json!({
        "status": s.state.status,
        "iterations": s.state.iterations,
        "gap": s.state.gap,
        "cost": s.solution.objective.total,
        "objective": s.solution.objective,
        "curtailment_mwh": s.solution.total_curtailment_mwh(instance.horizon.dt_hours()),
        "refined": s.refined,
        "max_violation": report.max(),
    })
}

fn print_summary(label: &str, v: &serde_json::Value) {
    println!("{label}");
    println!("  status       {}", v["status"].as_str().unwrap_or("?"));
    println!("  iterations   {}", v["iterations"]);
    println!("  gap          {:.3e}", v["gap"].as_f64().unwrap_or(f64::NAN));
    println!("  cost         {:.3}", v["cost"].as_f64().unwrap_or(f64::NAN));
    println!("  curtailment  {:.3} MWh", v["curtailment_mwh"].as_f64().unwrap_or(f64::NAN));
    println!("  violation    {:.2e}", v["max_violation"].as_f64().unwrap_or(f64::NAN));
}

fn emit(cli: &Cli, human: impl FnOnce(), machine: serde_json::Value) {
    if cli.json {
        println!("{machine}");
    } else {
        human();
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::SimulatePipe { instance, pipe, method } => {
            let inst = load(instance)?;
            let id = match pipe {
                Some(id) => id.clone(),
                None => match inst.dhs.pipelines.first() {
                    Some(p) => p.id.clone(),
                    None => bail!(Usage("instance has no pipelines".into())),
                },
            };
            let rows = simulation::simulate_pipe(&inst, &id)?;
            let name = format!("pipe_{id}.csv");
            export::write_pipe_csv(create(&cli.out, &name)?, &rows)?;
            let pick = |r: &simulation::PipeSimRow| match method {
                Method::Wmm => r.t_out_wmm_c,
                Method::Nm => r.t_out_nm_c,
                Method::Steady => r.t_out_steady_c,
            };
            let outlets: Vec<(i64, f64)> = rows.iter().map(|r| (r.period, pick(r))).collect();
            emit(
                cli,
                || {
                    println!("pipeline {id}, {method:?} outlet temperatures");
                    for (p, t) in &outlets {
                        println!("  period {p:>4}  {t:.3} °C");
                    }
                    println!("wrote {}", cli.out.join(&name).display());
                },
                json!({"pipe": id, "method": format!("{method:?}").to_lowercase(), "outlet": outlets, "csv": cli.out.join(&name)}),
            );
        }
        Command::SimulateNetwork { instance, method } => {
            let inst = load(instance)?;
            let sim = simulation::simulate_network(&inst, (*method).into())?;
            export::write_network_csv(create(&cli.out, "network.csv")?, &inst, &sim)?;
            let unresolved = sim.h_node.iter().flatten().filter(|h| h.is_none()).count();
            emit(
                cli,
                || {
                    println!("simulated {} nodes over {} periods", inst.dhs.nodes.len(), inst.periods());
                    if unresolved > 0 {
                        println!("  {unresolved} node-periods without feasible pump settings (h_n left empty)");
                    }
                    println!("wrote {}", cli.out.join("network.csv").display());
                },
                json!({"nodes": inst.dhs.nodes.len(), "periods": inst.periods(), "unresolved_pressures": unresolved}),
            );
        }
        Command::Dispatch { instance, method, solve: args } => {
            let inst = load(instance)?;
            let s = solve(&inst, args, (*method).into())?;
            write_solution(&cli.out, &inst, &s)?;
            let v = summary(&inst, &s);
            emit(cli, || print_summary("dispatch", &v), v.clone());
        }
        Command::Steady { instance, solve: args } => {
            let inst = load(instance)?;
            let s = solve(&inst, args, PipeModel::Steady)?;
            write_solution(&cli.out, &inst, &s)?;
            let v = summary(&inst, &s);
            emit(cli, || print_summary("steady dispatch", &v), v.clone());
        }
        Command::Compare { instance, solve: args } => {
            let inst = load(instance)?;
            let steady = solve(&inst, args, PipeModel::Steady)?;
            let dynamic = solve(&inst, args, PipeModel::Wmm)?;
            write_solution(&cli.out.join("steady"), &inst, &steady)?;
            write_solution(&cli.out.join("dynamic"), &inst, &dynamic)?;
            export::write_comparison_csv(create(&cli.out, "comparison.csv")?, &inst, &steady.solution, &dynamic.solution)?;
            let vs = summary(&inst, &steady);
            let vd = summary(&inst, &dynamic);
            let cost = |v: &serde_json::Value| v["cost"].as_f64().unwrap_or(f64::NAN);
            let curt = |v: &serde_json::Value| v["curtailment_mwh"].as_f64().unwrap_or(f64::NAN);
            emit(
                cli,
                || {
                    println!("{:<18}{:>16}{:>16}", "", "steady", "dynamic");
                    println!("{:<18}{:>16.3}{:>16.3}", "cost", cost(&vs), cost(&vd));
                    println!("{:<18}{:>16.3}{:>16.3}", "curtailment MWh", curt(&vs), curt(&vd));
                    println!("{:<18}{:>16}{:>16}", "iterations", vs["iterations"].to_string(), vd["iterations"].to_string());
                    println!("{:<18}{:>16.2e}{:>16.2e}", "gap", vs["gap"].as_f64().unwrap_or(f64::NAN), vd["gap"].as_f64().unwrap_or(f64::NAN));
                    println!("wrote {}", cli.out.display());
                },
                json!({"steady": vs, "dynamic": vd}),
            );
        }
        Command::Scenarios {
            instance,
            grid,
            montecarlo,
            seed,
            jobs,
            no_timing,
            solve: args,
        } => {
            let inst = load(instance)?;
            let plan = match (grid, montecarlo) {
                (Some(g), None) => parse_grid(g)?,
                (None, Some(n)) => ScenarioPlan::MonteCarlo { count: *n, seed: *seed },
                _ => bail!(Usage("give one of --grid or --montecarlo".into())),
            };
            let opts = gbd_options(args, PipeModel::Wmm)?;
            let results = run_scenarios(&inst, &plan, &opts, args.refine, *jobs)?;
            export::write_scenarios_csv(create(&cli.out, "scenarios.csv")?, &results, !no_timing)?;
            let converged = results.iter().filter(|r| r.converged).count();
            let failed = results.iter().filter(|r| r.error.is_some()).count();
            emit(
                cli,
                || {
                    println!("{converged}/{} scenarios converged", results.len());
                    for r in results.iter().filter(|r| r.error.is_some()) {
                        println!("  scenario {} failed: {}", r.scenario, r.error.as_deref().unwrap_or(""));
                    }
                    println!("wrote {}", cli.out.join("scenarios.csv").display());
                },
                json!({"scenarios": results.len(), "converged": converged, "failed": failed}),
            );
            if !results.is_empty() && failed == results.len() {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HYDRODISPATCH_LOG", "warn")).init();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
