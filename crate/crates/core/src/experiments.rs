//! Experiment automation: Cartesian sweeps over scenario parameters,
//! replications with derived seeds, a bounded worker pool and flat-file
//! results.
//!
//! Output layout under the chosen directory:
//!
//! * `summary.csv`: one row per (point, replication): run id, indices, seed,
//!   status, every axis value, then every scalar metric.
//! * `runs/<run_id>/`: `metrics.json`, `trips.jsonl` and, when the scenario
//!   asks for it, `trace.jsonl`.
//! * `manifest.json`: the plan and, per run, its point, seed, status and files.

use std::fs;
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::{run_replication, ReplicationConfig, RunOutput};
use crate::metrics::Metrics;
use crate::scenario::{validate_scenario, ScenarioDocument};
use crate::trace::write_trace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    /// Dotted path into the scenario document, e.g. `fleet.size`.
    pub path: String,
    pub values: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Path(PathBuf),
    Inline(Box<ScenarioDocument>),
}

fn one_u32() -> u32 {
    1
}

fn one_u64() -> u64 {
    1
}

fn one_usize() -> usize {
    1
}

/// Plan file as written by the user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub scenario: ScenarioRef,
    #[serde(default)]
    pub axes: Vec<Axis>,
    #[serde(default = "one_u32")]
    pub replications: u32,
    #[serde(default = "one_u64")]
    pub base_seed: u64,
    #[serde(default = "one_usize")]
    pub parallelism: usize,
}

/// A plan with its base scenario loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub scenario: ScenarioDocument,
    pub axes: Vec<Axis>,
    pub replications: u32,
    pub base_seed: u64,
    pub parallelism: usize,
}

impl ExperimentPlan {
    /// Load a plan; a scenario given by path is resolved against the plan's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: PlanFile = serde_json::from_str(&text).map_err(Error::parse)?;
        let scenario = match file.scenario {
            ScenarioRef::Inline(doc) => *doc,
            ScenarioRef::Path(p) => ScenarioDocument::load(&path.parent().unwrap_or(Path::new(".")).join(p))?,
        };
        Ok(ExperimentPlan {
            scenario,
            axes: file.axes,
            replications: file.replications,
            base_seed: file.base_seed,
            parallelism: file.parallelism,
        })
    }

    fn check(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Plan("replications must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Plan("parallelism must be at least 1".into()));
        }
        let base = self.scenario.to_json_value();
        for a in &self.axes {
            if a.values.is_empty() {
                return Err(Error::Plan(format!("axis {} has no values", a.path)));
            }
            let mut probe = base.clone();
            if set_path(&mut probe, &a.path, a.values[0].clone()).is_err() {
                return Err(Error::Plan(format!("parameter path {} does not resolve in the scenario", a.path)));
            }
            if lookup(&base, &a.path).is_none() {
                // a leaf that is absent only because it is optional must
                // still be a known field
                if let Err(Error::Parse { message, .. }) = ScenarioDocument::from_json(&probe.to_string()) {
                    if message.contains("unknown field") || message.contains("unknown variant") {
                        return Err(Error::Plan(format!("parameter path {} does not resolve in the scenario: {message}", a.path)));
                    }
                }
            }
        }
        Ok(())
    }
}

fn lookup<'a>(v: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(v, |cur, key| match cur {
        Value::Object(m) => m.get(key),
        Value::Array(a) => key.parse::<usize>().ok().and_then(|i| a.get(i)),
        _ => None,
    })
}

/// Overwrite the value at a dotted path. Every parent must exist; the leaf of
/// an object may be new.
pub fn set_path(doc: &mut Value, path: &str, value: Value) -> std::result::Result<(), String> {
    let keys: Vec<&str> = path.split('.').collect();
    let (leaf, parents) = keys.split_last().ok_or_else(|| "empty path".to_string())?;
    let mut cur = doc;
    for k in parents {
        cur = match cur {
            Value::Object(m) => m.get_mut(*k).ok_or_else(|| format!("no key {k}"))?,
            Value::Array(a) => k.parse::<usize>().ok().and_then(|i| a.get_mut(i)).ok_or_else(|| format!("no index {k}"))?,
            _ => return Err(format!("{k} is not inside an object")),
        };
    }
    match cur {
        Value::Object(m) => {
            m.insert((*leaf).to_string(), value);
            Ok(())
        }
        Value::Array(a) => {
            let slot = leaf.parse::<usize>().ok().and_then(|i| a.get_mut(i)).ok_or_else(|| format!("no index {leaf}"))?;
            *slot = value;
            Ok(())
        }
        _ => Err(format!("{leaf} is not inside an object")),
    }
}

/// One replication of one sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub point_index: usize,
    /// (path, value) per axis, in axis order.
    pub point: Vec<(String, Value)>,
    pub replication: u32,
    pub seed: u64,
    pub run_id: String,
    /// Scenario with the point's values applied.
    pub scenario: Value,
}

fn point_json(point: &[(String, Value)]) -> String {
    let pairs: Vec<Value> = point.iter().map(|(p, v)| Value::Array(vec![Value::String(p.clone()), v.clone()])).collect();
    Value::Array(pairs).to_string()
}

/// SHA-256 over the base seed, the point (canonical JSON) and the
/// replication index; the first eight bytes (little-endian) form the seed.
pub fn derive_seed(base_seed: u64, point: &[(String, Value)], replication: u32) -> (u64, String) {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    h.update(point_json(point).as_bytes());
    h.update(replication.to_le_bytes());
    let digest = h.finalize();
    let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    (seed, hex::encode(&digest[..8]))
}

/// Cartesian product of the axes (first axis varies slowest) times the
/// replications.
pub fn expand_plan(plan: &ExperimentPlan) -> Result<Vec<RunSpec>> {
    plan.check()?;
    let base = plan.scenario.to_json_value();
    let mut points: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for a in &plan.axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                a.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((a.path.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    let mut runs = Vec::new();
    for (point_index, point) in points.into_iter().enumerate() {
        let mut scenario = base.clone();
        for (path, v) in &point {
            set_path(&mut scenario, path, v.clone()).map_err(|e| Error::Plan(format!("{path}: {e}")))?;
        }
        for replication in 0..plan.replications {
            let (seed, run_id) = derive_seed(plan.base_seed, &point, replication);
            runs.push(RunSpec { point_index, point: point.clone(), replication, seed, run_id, scenario: scenario.clone() });
        }
    }
    Ok(runs)
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Ok,
    Failed(String),
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub spec: RunSpec,
    pub status: RunStatus,
    pub metrics: Option<Metrics>,
    pub wall_ms: u64,
    /// Files written for this run, relative to the output directory.
    pub files: Vec<String>,
}

/// Execute one run, writing its artifacts under `dir` when given.
pub fn execute(spec: &RunSpec, dir: Option<&Path>) -> RunResult {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| -> Result<(Metrics, Vec<String>)> {
        let doc: ScenarioDocument = serde_json::from_value(spec.scenario.clone()).map_err(Error::parse)?;
        let model = validate_scenario(&doc)?;
        let mut cfg = ReplicationConfig::from_run(&model.run);
        cfg.seed = spec.seed;
        let out = run_replication(&model, &cfg)?;
        let files = match dir {
            Some(d) => {
                let rel = format!("runs/{}", spec.run_id);
                write_run_outputs(&d.join(&rel), &out)?.into_iter().map(|f| format!("{rel}/{f}")).collect()
            }
            None => Vec::new(),
        };
        Ok((out.metrics, files))
    }));
    let (status, metrics, files) = match outcome {
        Ok(Ok((m, files))) => (RunStatus::Ok, Some(m), files),
        Ok(Err(e)) => (RunStatus::Failed(e.to_string()), None, Vec::new()),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "worker panicked".into());
            (RunStatus::Failed(format!("panic: {msg}")), None, Vec::new())
        }
    };
    RunResult { spec: spec.clone(), status, metrics, wall_ms: start.elapsed().as_millis() as u64, files }
}

/// Write `metrics.json`, `trips.jsonl` and (if recorded) `trace.jsonl`;
/// returns the file names written.
pub fn write_run_outputs(dir: &Path, out: &RunOutput) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let p = dir.join("metrics.json");
    let text = serde_json::to_string_pretty(&out.metrics).expect("metrics serialize");
    fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
    files.push("metrics.json".to_string());

    let p = dir.join("trips.jsonl");
    let f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
    let mut w = BufWriter::new(f);
    for t in &out.trips {
        writeln!(w, "{}", serde_json::to_string(t).expect("trip serializes")).map_err(|e| Error::io(&p, e))?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    files.push("trips.jsonl".to_string());

    let p = dir.join("trace.jsonl");
    match &out.trace {
        Some(trace) => {
            write_trace(&p, trace)?;
            files.push("trace.jsonl".to_string());
        }
        None if p.exists() => fs::remove_file(&p).map_err(|e| Error::io(&p, e))?,
        None => {}
    }
    Ok(files)
}

/// Fail early when `dir` cannot be written.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".podway-write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

/// Run every expanded run on up to `plan.parallelism` workers. Results come
/// back ordered by (point, replication). With `out_dir`, artifacts and the
/// summary are persisted.
pub fn run_plan(plan: &ExperimentPlan, out_dir: Option<&Path>) -> Result<Vec<RunResult>> {
    let runs = expand_plan(plan)?;
    if let Some(d) = out_dir {
        ensure_writable(d)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.parallelism)
        .build()
        .map_err(|e| Error::Plan(format!("cannot start workers: {e}")))?;
    let mut results: Vec<RunResult> = pool.install(|| {
        runs.par_iter()
            .map(|r| {
                let res = execute(r, out_dir);
                if let RunStatus::Failed(msg) = &res.status {
                    log::warn!("run {} failed: {msg}", r.run_id);
                }
                res
            })
            .collect()
    });
    results.sort_by_key(|r| (r.spec.point_index, r.spec.replication));
    if let Some(d) = out_dir {
        persist(plan, &results, d)?;
    }
    Ok(results)
}

/// Scalar metric columns in a stable order. Nested maps are flattened with
/// dotted names (`stations.12.wait_mean_s`), `queue_quarters` becomes
/// `queue_quarters.1`..`.4`; `queue_profile` stays in `metrics.json` only.
pub fn metric_columns(m: &Metrics) -> Vec<(String, String)> {
    fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        match v {
            Value::Object(map) => {
                for (k, v) in map {
                    let name = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    if name != "queue_profile" {
                        flatten(&name, v, out);
                    }
                }
            }
            Value::Array(items) => {
                for (i, x) in items.iter().enumerate() {
                    flatten(&format!("{prefix}.{}", i + 1), x, out);
                }
            }
            Value::Null => out.push((prefix.to_string(), String::new())),
            Value::String(s) => out.push((prefix.to_string(), s.clone())),
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut out = Vec::new();
    flatten("", &serde_json::to_value(m).expect("metrics serialize"), &mut out);
    out
}

fn axis_cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn status_text(s: &RunStatus) -> String {
    match s {
        RunStatus::Ok => "ok".to_string(),
        RunStatus::Failed(m) => format!("failed: {m}"),
    }
}

/// Write a summary table: the key columns, then every metric column. Rows
/// without metrics leave the metric cells empty.
pub fn write_summary(path: &Path, keys: &[String], rows: &[(Vec<String>, Option<&Metrics>)]) -> Result<()> {
    let flat: Vec<Option<Vec<(String, String)>>> = rows.iter().map(|(_, m)| m.map(metric_columns)).collect();
    let mut columns: Vec<String> = Vec::new();
    for cols in flat.iter().flatten() {
        for (k, _) in cols {
            if !columns.contains(k) {
                columns.push(k.clone());
            }
        }
    }
    let csv_err = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(keys.iter().chain(&columns)).map_err(csv_err)?;
    for ((key, _), cols) in rows.iter().zip(&flat) {
        let cells: Vec<&str> = columns
            .iter()
            .map(|c| cols.as_ref().and_then(|cs| cs.iter().find(|(k, _)| k == c)).map_or("", |(_, v)| v.as_str()))
            .collect();
        w.write_record(key.iter().map(String::as_str).chain(cells)).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write `summary.csv` and `manifest.json`.
pub fn persist(plan: &ExperimentPlan, results: &[RunResult], dir: &Path) -> Result<()> {
    let mut keys = vec!["run_id".to_string(), "point".into(), "replication".into(), "seed".into(), "status".into()];
    keys.extend(plan.axes.iter().map(|a| a.path.clone()));
    let rows: Vec<(Vec<String>, Option<&Metrics>)> = results
        .iter()
        .map(|r| {
            let mut row = vec![
                r.spec.run_id.clone(),
                r.spec.point_index.to_string(),
                r.spec.replication.to_string(),
                r.spec.seed.to_string(),
                status_text(&r.status),
            ];
            row.extend(r.spec.point.iter().map(|(_, v)| axis_cell(v)));
            (row, r.metrics.as_ref())
        })
        .collect();
    write_summary(&dir.join("summary.csv"), &keys, &rows)?;

    let runs: Vec<Value> = results
        .iter()
        .map(|r| {
            serde_json::json!({
                "run_id": r.spec.run_id,
                "point": r.spec.point_index,
                "values": r.spec.point.iter().map(|(p, v)| serde_json::json!({"path": p, "value": v})).collect::<Vec<_>>(),
                "replication": r.spec.replication,
                "seed": r.spec.seed,
                "status": status_text(&r.status),
                "dir": format!("runs/{}", r.spec.run_id),
                "files": r.files,
                "wall_ms": r.wall_ms,
            })
        })
        .collect();
    let manifest = serde_json::json!({
        "plan": {
            "scenario": plan.scenario.to_json_value(),
            "axes": plan.axes,
            "replications": plan.replications,
            "base_seed": plan.base_seed,
            "parallelism": plan.parallelism,
        },
        "summary": "summary.csv",
        "runs": runs,
    });
    let p = dir.join("manifest.json");
    fs::write(&p, serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n").map_err(|e| Error::io(&p, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn plan(axes: Vec<Axis>, replications: u32) -> ExperimentPlan {
        let scenario = ScenarioDocument::from_json(
            r#"{"network": {"benchmark": {"layout": {"kind": "ring", "stations": 3, "spacing_m": 150}}},
                "fleet": {"size": 4}, "run": {"horizon_s": 300}}"#,
        )
        .unwrap();
        ExperimentPlan { scenario, axes, replications, base_seed: 9, parallelism: 2 }
    }

    fn axis(path: &str, values: &[Value]) -> Axis {
        Axis { path: path.into(), values: values.to_vec() }
    }

    #[test]
    fn three_by_four_is_sixty_four() {
        let v = |xs: [i64; 4]| xs.map(Value::from).to_vec();
        let p = plan(
            vec![
                axis("fleet.size", &v([2, 3, 4, 5])),
                axis("demand.lambda_per_h", &v([10, 20, 30, 40])),
                axis("fleet.stay_cap", &v([0, 1, 2, 3])),
            ],
            1,
        );
        assert_eq!(expand_plan(&p).unwrap().len(), 64);
    }

    #[test]
    fn runs_are_distinct_and_ordered() {
        let p = plan(vec![axis("fleet.size", &[2.into(), 3.into()]), axis("run.horizon_s", &[100.into(), 200.into(), 300.into()])], 10);
        let runs = expand_plan(&p).unwrap();
        assert_eq!(runs.len(), 60);
        let keys: BTreeSet<_> = runs.iter().map(|r| (r.point_index, r.replication)).collect();
        assert_eq!(keys.len(), 60);
        let seeds: BTreeSet<_> = runs.iter().map(|r| r.seed).collect();
        assert_eq!(seeds.len(), 60);
        // first axis slowest
        assert_eq!(runs[10].point[0].1, Value::from(2));
        assert_eq!(runs[10].point[1].1, Value::from(200));
        assert_eq!(runs[30].point[0].1, Value::from(3));
    }

    #[test]
    fn no_axes_repeats_the_base() {
        let runs = expand_plan(&plan(vec![], 5)).unwrap();
        assert_eq!(runs.len(), 5);
        assert!(runs.iter().all(|r| r.point.is_empty()));
    }

    #[test]
    fn seeds_depend_only_on_their_point() {
        let a = expand_plan(&plan(vec![axis("fleet.size", &[2.into(), 3.into()])], 2)).unwrap();
        let b = expand_plan(&plan(vec![axis("fleet.size", &[2.into(), 4.into()])], 2)).unwrap();
        assert_eq!(a[0].seed, b[0].seed);
        assert_eq!(a[1].seed, b[1].seed);
        assert_ne!(a[2].seed, b[2].seed);
    }

    #[test]
    fn unknown_path_names_the_path() {
        let err = expand_plan(&plan(vec![axis("fleet.sise", &[2.into()])], 1)).unwrap_err();
        assert!(err.to_string().contains("fleet.sise"), "{err}");
        let err = expand_plan(&plan(vec![axis("nothing.here", &[2.into()])], 1)).unwrap_err();
        assert!(err.to_string().contains("nothing.here"), "{err}");
    }

    #[test]
    fn optional_leaf_resolves() {
        let runs = expand_plan(&plan(vec![axis("demand.renege_timeout_s", &[60.into()])], 1)).unwrap();
        assert_eq!(runs[0].scenario["demand"]["renege_timeout_s"], Value::from(60));
    }

    #[test]
    fn invalid_variant_fails_alone() {
        let p = plan(vec![axis("fleet.size", &[2.into(), 100000.into(), 3.into()])], 1);
        let res = run_plan(&p, None).unwrap();
        assert_eq!(res.len(), 3);
        assert_eq!(res[0].status, RunStatus::Ok);
        assert!(matches!(res[1].status, RunStatus::Failed(_)));
        assert_eq!(res[2].status, RunStatus::Ok);
    }

    #[test]
    fn unwritable_directory_aborts_up_front() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain-file");
        fs::write(&file, b"x").unwrap();
        let err = run_plan(&plan(vec![], 1), Some(&file.join("out"))).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn set_path_handles_arrays() {
        let mut v = serde_json::json!({"a": [{"b": 1}, {"b": 2}]});
        set_path(&mut v, "a.1.b", 5.into()).unwrap();
        assert_eq!(v["a"][1]["b"], 5);
        assert!(set_path(&mut v, "a.7.b", 5.into()).is_err());
    }
}
