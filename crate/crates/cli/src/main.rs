//! `ofoflex` command-line front end.
//!
//! Exit codes: 0 success, 1 validation, 2 parse, 3 numerical, 4 I/O.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use ofoflex::grid_model::{controller_scope, parse_case, ControllerSpec, GridNetwork, HierarchySpec, Role};
use ofoflex::plant::{Dispatch, OperatingPoint};
use ofoflex::sensitivity::{compute_sensitivity, DEFAULT_DELTA};
use ofoflex::sim::{compute_metrics, run_scenario, summarize, Overrides, RunSummary, Scenario, Trace};
use ofoflex::Error;

#[derive(Parser)]
#[command(name = "ofoflex", version, about = "Hierarchical flexibility dispatch with feedback optimization")]
struct Cli {
    /// Print progress details to stderr.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a network file (and its embedded hierarchy) for consistency.
    Validate {
        #[arg(long)]
        network: PathBuf,
    },
    /// Run a scenario and write its trace.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Trace CSV. A summary is written next to it as `<out>.summary.json`.
        #[arg(long)]
        out: PathBuf,
        /// Also write the trace as JSON lines.
        #[arg(long)]
        jsonl: Option<PathBuf>,
        /// Step size applied to every controller.
        #[arg(long)]
        alpha: Option<f64>,
        /// Finite-difference step for the sensitivities, per-unit.
        #[arg(long)]
        delta: Option<f64>,
        /// Simulated seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Compute a controller's sensitivity matrix and write it as CSV.
    Sensitivity {
        #[arg(long)]
        network: PathBuf,
        /// Defaults to the first controller that owns actors.
        #[arg(long)]
        controller: Option<String>,
        /// JSON file with actor set points (W / var) to linearize around.
        #[arg(long)]
        operating_point: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tracking error of a trace against a requested PCC flow.
    Metrics {
        #[arg(long)]
        trace: PathBuf,
        /// Requested PCC flow, W.
        #[arg(long, allow_hyphen_values = true)]
        setpoint: f64,
        /// Evaluation time, seconds.
        #[arg(long)]
        at: f64,
        /// PCC branch id; inferred from the trace when omitted.
        #[arg(long)]
        pcc: Option<String>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 4,
        Error::Parse(_) => 2,
        e if e.is_numerical() => 3,
        _ => 1,
    }
}

fn fail(e: &Error) -> ExitCode {
    match e {
        Error::Validation(msgs) => {
            eprintln!("invalid input:");
            for m in msgs {
                eprintln!("- {m}");
            }
        }
        e => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(e))
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn validate(network: &Path) -> Result<(), Error> {
    let (net, hierarchy) = parse_case(&read(network)?)?;
    println!(
        "valid: {} buses, {} branches, {} actors, {} controllers",
        net.buses.len(),
        net.branches.len(),
        net.actors.len(),
        hierarchy.map_or(0, |h| h.controllers.len())
    );
    Ok(())
}

#[derive(Serialize)]
struct Footer<'a> {
    scenario: String,
    trace: String,
    completed: bool,
    error: Option<String>,
    #[serde(flatten)]
    summary: &'a RunSummary,
}

fn summary_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".summary.json");
    out.with_file_name(name)
}

fn run(
    scenario: &Path,
    out: &Path,
    jsonl: Option<&Path>,
    overrides: &Overrides,
    verbose: bool,
) -> Result<(), Error> {
    let sc = Scenario::load_with(scenario, overrides)?;
    if verbose {
        eprintln!(
            "running {} controllers for {} s ({} events)",
            sc.hierarchy.controllers.len(),
            sc.duration,
            sc.events.len()
        );
    }
    let (trace, error): (Trace, Option<Error>) = match run_scenario(&sc) {
        Ok(t) => (t, None),
        Err(a) => (a.trace, Some(a.error)),
    };
    trace.write_csv(out)?;
    if let Some(path) = jsonl {
        trace.write_jsonl(path)?;
    }
    let summary = summarize(&trace);
    let footer = Footer {
        scenario: scenario.display().to_string(),
        trace: out.display().to_string(),
        completed: error.is_none(),
        error: error.as_ref().map(ToString::to_string),
        summary: &summary,
    };
    let text = serde_json::to_string_pretty(&footer).expect("summary serializes");
    write(&summary_path(out), &(text + "\n"))?;
    if verbose {
        eprintln!("{} records written to {}", trace.len(), out.display());
    }
    for m in &summary.requests {
        println!("{}: request {} W, flow {:.1} W, epsilon {}", m.pcc, m.p_set_w, m.p_pcc_w, m.epsilon_percent());
    }
    match error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Without a hierarchy section, one controller observes every bus and owns
/// every controllable actor.
fn fallback_hierarchy(net: &GridNetwork) -> HierarchySpec {
    let slack_layer = net
        .slack_idx()
        .map(|i| net.buses[i].layer.clone())
        .unwrap_or_default();
    HierarchySpec {
        controllers: vec![ControllerSpec {
            id: "controller".into(),
            layer: slack_layer,
            role: Role::Primary,
            alpha: 0.1,
            cycle_time: 1.0,
            actors: net
                .actors
                .iter()
                .filter(|a| a.kind == ofoflex::grid_model::ActorKind::Controllable)
                .map(|a| a.id.clone())
                .collect(),
            observed_buses: net.buses.iter().map(|b| b.id.clone()).collect(),
            observed_branches: Vec::new(),
            parent: None,
            pcc_branch: None,
        }],
    }
}

fn sensitivity(
    network: &Path,
    controller: Option<&str>,
    operating_point: Option<&Path>,
    delta: f64,
    out: &Path,
    verbose: bool,
) -> Result<(), Error> {
    let (net, hierarchy) = parse_case(&read(network)?)?;
    let hierarchy = hierarchy.unwrap_or_else(|| fallback_hierarchy(&net));
    let id = match controller {
        Some(c) => c.to_string(),
        None => hierarchy
            .controllers
            .iter()
            .find(|c| !c.actors.is_empty())
            .or(hierarchy.controllers.first())
            .map(|c| c.id.clone())
            .ok_or_else(|| Error::Validation(vec!["hierarchy has no controllers".into()]))?,
    };
    let dispatch = match operating_point {
        Some(p) => OperatingPoint::from_json(&read(p)?)?.to_dispatch(&net)?,
        None => Dispatch::initial(&net),
    };
    let scope = controller_scope(&net, &hierarchy, &id)?;
    let sens = compute_sensitivity(&net, &dispatch, &scope, delta)?;
    if verbose {
        eprintln!("{id}: {} outputs x {} inputs", sens.rows(), sens.cols());
    }
    write(out, &sens.to_csv())
}

fn metrics(trace: &Path, setpoint: f64, at: f64, pcc: Option<&str>) -> Result<(), Error> {
    let trace = Trace::from_csv(&read(trace)?)?;
    let m = compute_metrics(&trace, setpoint, at, pcc)?;
    println!("epsilon: {}", m.epsilon_percent());
    println!("pcc: {}", m.pcc);
    println!("p_set_w: {}", m.p_set_w);
    println!("p_pcc_w: {} (t = {} s)", m.p_pcc_w, m.measured_at_s);
    println!("max_voltage_violation_pu: {}", m.max_voltage_violation_pu);
    match m.time_to_90_s {
        Some(t) => println!("time_to_90_s: {t}"),
        None => println!("time_to_90_s: not reached"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { network } => validate(network),
        Command::Run {
            scenario,
            out,
            jsonl,
            alpha,
            delta,
            duration,
        } => {
            let overrides = Overrides {
                alpha: *alpha,
                delta: *delta,
                duration: *duration,
            };
            run(scenario, out, jsonl.as_deref(), &overrides, cli.verbose)
        }
        Command::Sensitivity {
            network,
            controller,
            operating_point,
            delta,
            out,
        } => sensitivity(
            network,
            controller.as_deref(),
            operating_point.as_deref(),
            *delta,
            out,
            cli.verbose,
        ),
        Command::Metrics {
            trace,
            setpoint,
            at,
            pcc,
        } => metrics(trace, *setpoint, *at, pcc.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
