//! `podway` command-line entry point.
//!
//! Exit codes: 0 ok, 1 validation failure, 2 usage or parse error,
//! 3 runtime invariant breach.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{Map, Value};

use podway::bench::{generate_benchmark, BenchParams, BenchmarkKind};
use podway::experiments::{self, ExperimentPlan, RunStatus};
use podway::kernel::event::US_PER_S;
use podway::kernel::{run_replication, EventKind, ReplicationConfig};
use podway::network::{validate_graph, NetworkGraph};
use podway::scenario::{validate_scenario, NetworkSource, ScenarioDocument};
use podway::trace::{filter_stream, TraceFilter};
use podway::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_BREACH: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "podway", version, about = "Discrete-event microsimulator for personal rapid transit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a network model file, and optionally a scenario against it.
    /// A scenario file may also be given alone.
    Validate { model: PathBuf, scenario: Option<PathBuf> },
    /// Simulate one replication of a scenario.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated seconds.
        #[arg(long)]
        horizon: Option<f64>,
        /// Seconds excluded from statistics.
        #[arg(long)]
        warmup: Option<f64>,
        /// Record the event trace (`--trace` alone means on).
        #[arg(long, value_enum, num_args = 0..=1, default_missing_value = "on")]
        trace: Option<Toggle>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run every point and replication of an experiment plan.
    Sweep {
        plan: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Override the plan's worker count.
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Generate a benchmark network model.
    ///
    /// Kinds: rect_grid (alias grid), ring, linear, center_periphery (alias
    /// center). Parameters are key=value pairs: layout fields (rows, cols,
    /// block_m, stations, spacing_m, spokes, radius_m) or shared knobs
    /// (v_limit, station.berths, capacitor.capacity, ...).
    Bench {
        kind: String,
        params: Vec<String>,
        /// Output file; standard output when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Stream selected lines of a trace file.
    Trace {
        trace: PathBuf,
        /// Comma-separated event kinds, e.g. SectorBoundary,TripEnd.
        #[arg(long, value_delimiter = ',')]
        filter: Vec<String>,
        /// Inclusive time window in seconds.
        #[arg(long, num_args = 2, value_names = ["T1", "T2"])]
        between: Option<Vec<f64>>,
        /// Output file; standard output when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PODWAY_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { model, scenario } => cmd_validate(&model, scenario.as_deref()),
        Command::Run { scenario, seed, horizon, warmup, trace, out } => {
            cmd_run(&scenario, seed, horizon, warmup, trace, &out)
        }
        Command::Sweep { plan, out, parallelism } => cmd_sweep(&plan, &out, parallelism),
        Command::Bench { kind, params, out } => cmd_bench(&kind, &params, out.as_deref()),
        Command::Trace { trace, filter, between, out } => cmd_trace(&trace, &filter, between, out.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Config(_) | Error::Plan(_) => EXIT_VALIDATION,
        Error::InvariantBreach { .. } => EXIT_BREACH,
        Error::Parse { .. } | Error::Io { .. } => EXIT_USAGE,
    }
}

fn read_json(path: &Path) -> Result<Value, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| with_path(path, Error::parse(e)))
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { line, column, message } => {
            Error::Parse { line, column, message: format!("{}: {message}", path.display()) }
        }
        other => other,
    }
}

fn load_scenario(path: &Path) -> Result<ScenarioDocument, Error> {
    ScenarioDocument::load(path).map_err(|e| with_path(path, e))
}

fn cmd_validate(first: &Path, scenario: Option<&Path>) -> Result<u8, Error> {
    let value = read_json(first)?;
    if scenario.is_none() && value.get("network").is_some() {
        let doc = load_scenario(first)?;
        validate_scenario(&doc)?;
        println!("ok");
        return Ok(0);
    }
    let graph = NetworkGraph::from_json(&value.to_string()).map_err(|e| with_path(first, e))?;
    let report = validate_graph(&graph);
    if !report.is_empty() {
        print!("{report}");
        return Ok(EXIT_VALIDATION);
    }
    if let Some(sp) = scenario {
        let mut doc = load_scenario(sp)?;
        doc.network = NetworkSource::Inline(graph.to_model());
        validate_scenario(&doc)?;
    }
    println!("ok");
    Ok(0)
}

fn cmd_run(
    path: &Path,
    seed: Option<u64>,
    horizon: Option<f64>,
    warmup: Option<f64>,
    trace: Option<Toggle>,
    out: &Path,
) -> Result<u8, Error> {
    let mut doc = load_scenario(path)?;
    if let Some(s) = seed {
        doc.run.seed = s;
    }
    if let Some(h) = horizon {
        doc.run.horizon_s = h;
    }
    if let Some(w) = warmup {
        doc.run.warmup_s = w;
    }
    if let Some(t) = trace {
        doc.run.trace = t == Toggle::On;
    }
    let model = validate_scenario(&doc)?;
    experiments::ensure_writable(out)?;
    let cfg = ReplicationConfig::from_run(&model.run);
    let output = run_replication(&model, &cfg)?;
    experiments::write_run_outputs(out, &output)?;
    let keys = vec!["seed".to_string()];
    experiments::write_summary(&out.join("summary.csv"), &keys, &[(vec![cfg.seed.to_string()], Some(&output.metrics))])?;

    let m = &output.metrics;
    let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.1}"));
    println!(
        "seed {}: {} groups appeared, {} served, {} reneged, {} in system; mean wait {} s, mean trip {} s{}",
        cfg.seed,
        m.groups_appeared,
        m.groups_served,
        m.groups_reneged,
        m.groups_in_system,
        opt(m.wait_mean_s),
        opt(m.trip_time_mean_s),
        if m.saturated { "; saturated" } else { "" },
    );
    Ok(0)
}

fn cmd_sweep(path: &Path, out: &Path, parallelism: Option<usize>) -> Result<u8, Error> {
    let mut plan = ExperimentPlan::load(path).map_err(|e| with_path(path, e))?;
    if let Some(p) = parallelism {
        plan.parallelism = p;
    }
    let results = experiments::run_plan(&plan, Some(out))?;
    let failed: Vec<_> = results.iter().filter(|r| r.status != RunStatus::Ok).collect();
    println!("{} runs, {} failed; results in {}", results.len(), failed.len(), out.display());
    for r in &failed {
        if let RunStatus::Failed(msg) = &r.status {
            eprintln!("run {} (point {}, replication {}) failed: {msg}", r.spec.run_id, r.spec.point_index, r.spec.replication);
        }
    }
    Ok(if failed.is_empty() { 0 } else { EXIT_VALIDATION })
}

const LAYOUT_KEYS: [&str; 7] = ["rows", "cols", "block_m", "stations", "spacing_m", "spokes", "radius_m"];

fn parse_bench(kind: &str, params: &[String]) -> Result<(BenchmarkKind, BenchParams), String> {
    let kind = match kind {
        "grid" => "rect_grid",
        "center" => "center_periphery",
        k => k,
    };
    let mut layout = Map::new();
    layout.insert("kind".into(), Value::String(kind.into()));
    let mut shared = serde_json::to_value(BenchParams::default()).expect("params serialize");
    for p in params {
        let (k, v) = p.split_once('=').ok_or_else(|| format!("parameter {p} is not key=value"))?;
        let v: Value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        if LAYOUT_KEYS.contains(&k) {
            layout.insert(k.into(), v);
        } else {
            experiments::set_path(&mut shared, k, v).map_err(|e| format!("unknown parameter {k}: {e}"))?;
        }
    }
    let kind: BenchmarkKind = serde_json::from_value(Value::Object(layout)).map_err(|e| format!("layout: {e}"))?;
    let params: BenchParams = serde_json::from_value(shared).map_err(|e| format!("parameters: {e}"))?;
    Ok((kind, params))
}

fn cmd_bench(kind: &str, params: &[String], out: Option<&Path>) -> Result<u8, Error> {
    let (kind, params) = match parse_bench(kind, params) {
        Ok(x) => x,
        Err(msg) => {
            eprintln!("error: {msg}");
            return Ok(EXIT_USAGE);
        }
    };
    let graph = match generate_benchmark(&kind, &params) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_USAGE);
        }
    };
    let text = graph.to_json_pretty() + "\n";
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e))?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn cmd_trace(path: &Path, kinds: &[String], between: Option<Vec<f64>>, out: Option<&Path>) -> Result<u8, Error> {
    let mut filter = TraceFilter::default();
    if !kinds.is_empty() {
        let mut set = BTreeSet::new();
        for k in kinds {
            match serde_json::from_value::<EventKind>(Value::String(k.clone())) {
                Ok(kind) => set.insert(kind),
                Err(_) => {
                    eprintln!("error: unknown event kind {k}");
                    return Ok(EXIT_USAGE);
                }
            };
        }
        filter.kinds = Some(set);
    }
    if let Some(b) = between {
        let to_us = |s: f64| (s * US_PER_S as f64).round().max(0.0) as u64;
        if !(b[0] <= b[1]) {
            eprintln!("error: --between needs T1 <= T2");
            return Ok(EXIT_USAGE);
        }
        filter.between = Some((to_us(b[0]), to_us(b[1])));
    }
    let input = BufReader::new(fs::File::open(path).map_err(|e| Error::io(path, e))?);
    let report = match out {
        Some(p) => {
            let f = fs::File::create(p).map_err(|e| Error::io(p, e))?;
            filter_stream(input, BufWriter::new(f), &filter).map_err(|e| Error::io(p, e))?
        }
        None => {
            let stdout = io::stdout().lock();
            filter_stream(input, BufWriter::new(stdout), &filter).map_err(|e| Error::io(path, e))?
        }
    };
    for (line, msg) in &report.skipped {
        eprintln!("warning: {}:{line}: skipped corrupt line: {msg}", path.display());
    }
    io::stderr().flush().ok();
    Ok(if report.skipped.is_empty() { 0 } else { EXIT_USAGE })
}
