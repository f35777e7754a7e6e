use super::*;
use crate::scenario::{validate_scenario, Model, ScenarioDocument};

fn model(json: &str) -> Model {
    validate_scenario(&ScenarioDocument::from_json(json).unwrap()).unwrap()
}

fn grid(rule: &str, vehicles: u32) -> Model {
    model(&format!(
        r#"{{"network": {{"benchmark": {{"layout": {{"kind": "rect_grid", "rows": 2, "cols": 2, "block_m": 200}}}}}},
            "fleet": {{"size": {vehicles}}}, "motion": {{"rule": "{rule}"}},
            "demand": {{"lambda_per_h": 60}}, "run": {{"horizon_s": 7200}}}}"#
    ))
}

fn cfg(seed: u64, horizon_s: f64) -> ReplicationConfig {
    ReplicationConfig { horizon_s, warmup_s: 0.0, seed, trace: false }
}

#[test]
fn grid_runs_and_conserves() {
    let m = grid("optimal", 20);
    let out = run_replication(&m, &cfg(1, 7200.0)).unwrap();
    let k = &out.metrics;
    assert!(k.groups_served > 100, "{k:?}");
    assert_eq!(k.groups_appeared, k.groups_served + k.groups_reneged + k.groups_in_system);
    assert_eq!(k.vehicles_start, 20);
    assert_eq!(k.vehicles_end, 20);
    assert_eq!(k.odometer_full_um + k.odometer_empty_um, k.odometer_total_um);
    assert_eq!(k.emergency_brakes, 0);
}

#[test]
fn leader_leaving_at_fork_exposes_the_next_one() {
    // a stopped vehicle just past a fork used to be hidden by a nearer one
    // that turned off there
    let m = model(
        r#"{"network": {"benchmark": {"layout": {"kind": "ring", "stations": 6, "spacing_m": 150}}},
            "fleet": {"size": 30}, "demand": {"lambda_per_h": 200}}"#,
    );
    let out = run_replication(&m, &cfg(2, 800.0)).unwrap();
    assert_eq!(out.metrics.emergency_brakes, 0);
}
