use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn podway(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_podway")).args(args).output().expect("podway runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn write_json(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn ring_scenario(extra: impl FnOnce(&mut Value)) -> Value {
    let mut v = json!({
        "network": {"benchmark": {"layout": {"kind": "ring", "stations": 3, "spacing_m": 150}}},
        "demand": {"lambda_per_h": 60},
        "fleet": {"size": 5},
        "run": {"horizon_s": 600, "seed": 4}
    });
    extra(&mut v);
    v
}

#[test]
fn validate_accepts_bundled_files() {
    let dir = scenarios();
    let model = dir.join("linear_4.model.json");
    let o = podway(&["validate", model.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let o = podway(&["validate", model.to_str().unwrap(), dir.join("linear_failure.json").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let o = podway(&["validate", dir.join("grid_2x2.json").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
}

#[test]
fn validate_names_the_bad_odm_row() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write_json(
        tmp.path(),
        "s.json",
        &ring_scenario(|v| v["demand"]["odm"] = json!([[0.0, 0.5, 0.5], [0.5, 0.0, 0.4], [0.5, 0.5, 0.0]])),
    );
    let o = podway(&["validate", &s]);
    assert_eq!(code(&o), 1);
    let err = text(&o.stderr);
    assert!(err.contains("row 1") && err.contains("0.9"), "{err}");
}

#[test]
fn validate_rejects_a_fleet_larger_than_storage() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write_json(tmp.path(), "s.json", &ring_scenario(|v| v["fleet"]["size"] = json!(1000)));
    let o = podway(&["validate", &s]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("fleet"), "{}", text(&o.stderr));
}

#[test]
fn malformed_json_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("broken.json");
    fs::write(&p, "{\"network\": ").unwrap();
    assert_eq!(code(&podway(&["validate", p.to_str().unwrap()])), 2);
    assert_eq!(code(&podway(&["validate", "/nonexistent/x.json"])), 2);
}

#[test]
fn bench_is_deterministic_and_validates() {
    let a = podway(&["bench", "grid", "rows=2", "cols=3", "block_m=180"]);
    let b = podway(&["bench", "grid", "rows=2", "cols=3", "block_m=180"]);
    assert_eq!(code(&a), 0, "{}", text(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("g.json");
    let o = podway(&["bench", "ring", "stations=5", "spacing_m=200", "station.berths=4", "-o", p.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let model: Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
    assert!(model["stations"].as_object().unwrap().values().all(|s| s["berths"] == 4));
    assert_eq!(code(&podway(&["validate", p.to_str().unwrap()])), 0);
}

#[test]
fn bench_rejects_bad_parameters() {
    assert_eq!(code(&podway(&["bench", "ring", "stations=1", "spacing_m=100"])), 2);
    assert_eq!(code(&podway(&["bench", "ring", "stations=4", "spacing_m=100", "colour=red"])), 2);
    assert_eq!(code(&podway(&["bench", "hexagon"])), 2);
}

#[test]
fn run_writes_outputs_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write_json(tmp.path(), "s.json", &ring_scenario(|_| {}));
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for (dir, trace) in [(&a, "on"), (&b, "on"), (&c, "off")] {
        let o = podway(&["run", &s, "--seed", "9", "--trace", trace, "-o", dir.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", text(&o.stderr));
        assert!(text(&o.stdout).starts_with("seed 9:"));
    }
    for f in ["summary.csv", "metrics.json", "trips.jsonl", "trace.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(!c.join("trace.jsonl").exists());
    assert_eq!(fs::read(a.join("summary.csv")).unwrap(), fs::read(c.join("summary.csv")).unwrap());
    assert_eq!(fs::read(a.join("metrics.json")).unwrap(), fs::read(c.join("metrics.json")).unwrap());
}

#[test]
fn run_rejects_warmup_beyond_horizon() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write_json(tmp.path(), "s.json", &ring_scenario(|_| {}));
    let o = podway(&["run", &s, "--warmup", "900", "-o", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

fn traced_run(dir: &Path) -> PathBuf {
    let s = write_json(dir, "s.json", &ring_scenario(|_| {}));
    let out = dir.join("run");
    let o = podway(&["run", &s, "--trace", "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    out.join("trace.jsonl")
}

#[test]
fn trace_without_filter_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = traced_run(tmp.path());
    let o = podway(&["trace", trace.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(o.stdout, fs::read(&trace).unwrap());
}

#[test]
fn trace_filters_by_kind_and_time() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = traced_run(tmp.path());
    let o = podway(&["trace", trace.to_str().unwrap(), "--filter", "TripEnd,GroupAppears", "--between", "100", "300"]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let lines: Vec<Value> = text(&o.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!lines.is_empty());
    for e in &lines {
        assert!(e["kind"] == "TripEnd" || e["kind"] == "GroupAppears", "{e}");
        let t = e["t_us"].as_u64().unwrap();
        assert!((100_000_000..=300_000_000).contains(&t), "{e}");
    }
    assert_eq!(code(&podway(&["trace", trace.to_str().unwrap(), "--filter", "Teleport"])), 2);
}

#[test]
fn trace_skips_corrupt_lines_with_a_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = traced_run(tmp.path());
    let original = fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<&str> = original.lines().collect();
    lines.insert(3, "{not json");
    let damaged = tmp.path().join("damaged.jsonl");
    fs::write(&damaged, lines.join("\n") + "\n").unwrap();
    let o = podway(&["trace", damaged.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(text(&o.stderr).contains(":4: skipped corrupt line"), "{}", text(&o.stderr));
    assert_eq!(text(&o.stdout), original);
}

#[test]
fn sweep_output_does_not_depend_on_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = json!({
        "scenario": ring_scenario(|_| {}),
        "axes": [{"path": "fleet.size", "values": [3, 6]}, {"path": "motion.rule", "values": ["optimal", "careful"]}],
        "replications": 2,
        "base_seed": 77
    });
    let p = write_json(tmp.path(), "plan.json", &plan);
    let (d1, d4) = (tmp.path().join("w1"), tmp.path().join("w4"));
    for (d, w) in [(&d1, "1"), (&d4, "4")] {
        let o = podway(&["sweep", &p, "--parallelism", w, "-o", d.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", text(&o.stderr));
        assert!(text(&o.stdout).starts_with("8 runs, 0 failed"));
    }
    let sorted = |d: &Path| {
        let mut l: Vec<String> = fs::read_to_string(d.join("summary.csv")).unwrap().lines().map(String::from).collect();
        l.sort();
        l
    };
    assert_eq!(sorted(&d1), sorted(&d4));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(d1.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 8);
}

#[test]
fn sweep_rejects_an_unknown_parameter_path() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = json!({
        "scenario": ring_scenario(|_| {}),
        "axes": [{"path": "fleet.colour", "values": [1, 2]}]
    });
    let p = write_json(tmp.path(), "plan.json", &plan);
    let o = podway(&["sweep", &p, "-o", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("fleet.colour"), "{}", text(&o.stderr));
}

#[test]
fn sweep_reports_failed_points_and_keeps_going() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = json!({
        "scenario": ring_scenario(|_| {}),
        "axes": [{"path": "fleet.size", "values": [4, 100000]}]
    });
    let p = write_json(tmp.path(), "plan.json", &plan);
    let out = tmp.path().join("o");
    let o = podway(&["sweep", &p, "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().filter(|l| l.contains(",ok,")).count(), 1, "{summary}");
    assert_eq!(summary.lines().filter(|l| l.contains("failed")).count(), 1, "{summary}");
}
