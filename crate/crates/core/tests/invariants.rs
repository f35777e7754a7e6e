use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use proptest::prelude::*;
use serde_json::{json, Value};

use podway::demand::sample_destination;
use podway::experiments::{expand_plan, ExperimentPlan};
use podway::kernel::{metrics_config, run_replication, ReplicationConfig};
use podway::motion::{plan_sector_transit, SectorInput};
use podway::network::{NetworkGraph, Node, NodeId, NodeKind, Segment, SegmentId};
use podway::routing::{shortest_route, CostModel};
use podway::scenario::{validate_scenario, ScenarioDocument};
use podway::trace::replay;

fn scenario() -> impl Strategy<Value = Value> {
    let network = prop_oneof![
        (3u32..7, 120.0..250.0f64)
            .prop_map(|(n, s)| json!({"benchmark": {"layout": {"kind": "ring", "stations": n, "spacing_m": s}}})),
        (2u32..4, 150.0..250.0f64).prop_map(
            |(c, b)| json!({"benchmark": {"layout": {"kind": "rect_grid", "rows": 2, "cols": c, "block_m": b}}})
        ),
        (2u32..5).prop_map(|n| json!({"benchmark": {"layout": {"kind": "linear", "stations": n, "spacing_m": 250}}})),
    ];
    (
        network,
        1u32..16,
        5.0..200.0f64,
        prop::bool::ANY,
        prop::bool::ANY,
        prop::option::of(60.0..400.0f64),
        any::<u64>(),
    )
        .prop_map(|(network, fleet, lambda, careful, stations, renege, seed)| {
            json!({
                "network": network,
                "demand": {"lambda_per_h": lambda, "renege_timeout_s": renege},
                "fleet": {"size": fleet, "placement": if stations { "stations" } else { "capacitors" }},
                "motion": {"rule": if careful { "careful" } else { "optimal" }},
                "run": {"horizon_s": 900, "warmup_s": 120, "seed": seed, "trace": true}
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn runs_conserve_and_replay(doc in scenario()) {
        let doc = ScenarioDocument::from_json(&doc.to_string()).unwrap();
        let model = validate_scenario(&doc).unwrap();
        let cfg = ReplicationConfig::from_run(&model.run);
        let out = run_replication(&model, &cfg).unwrap();
        let m = &out.metrics;
        prop_assert_eq!(m.groups_appeared, m.groups_served + m.groups_reneged + m.groups_in_system);
        prop_assert_eq!(m.vehicles_start, model.fleet.size);
        prop_assert_eq!(m.vehicles_end, model.fleet.size);
        prop_assert_eq!(m.odometer_full_um + m.odometer_empty_um, m.odometer_total_um);
        prop_assert_eq!(m.emergency_brakes, 0);
        let trace = out.trace.as_deref().unwrap();
        prop_assert!(trace.windows(2).all(|w| w[0].t_us <= w[1].t_us));
        let seqs: BTreeSet<u64> = trace.iter().map(|e| e.seq).collect();
        prop_assert_eq!(seqs.len(), trace.len());
        prop_assert_eq!(&replay(trace, metrics_config(&model, &cfg)), m);
        let again = run_replication(&model, &cfg).unwrap();
        prop_assert_eq!(&again.metrics, m);
        prop_assert_eq!(again.trips, out.trips);
    }
}

fn graph(n: u32, edges: &[(u32, u32, f64)]) -> NetworkGraph {
    let nodes = (0..n).map(|i| Node { id: NodeId(i), kind: NodeKind::Join, position: [i as f64, 0.0] }).collect();
    let segs = edges
        .iter()
        .enumerate()
        .map(|(k, &(a, b, len))| Segment {
            id: SegmentId(k as u32),
            from: NodeId(a),
            to: NodeId(b),
            length: Some(len),
            v_limit: 10.0,
            sector_count: 1,
        })
        .collect();
    NetworkGraph::new(nodes, segs, BTreeMap::new(), BTreeMap::new())
}

fn edges() -> impl Strategy<Value = (u32, Vec<(u32, u32, f64)>)> {
    (3u32..9).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n, 0.5..50.0f64), 1..20)))
        .prop_map(|(n, es)| (n, es.into_iter().filter(|&(a, b, _)| a != b).collect()))
}

proptest! {
    #[test]
    fn routes_are_connected_and_satisfy_the_triangle_inequality((n, es) in edges(), a in 0u32..9, b in 0u32..9, c in 0u32..9) {
        let (a, b, c) = (NodeId(a % n), NodeId(b % n), NodeId(c % n));
        let g = graph(n, &es);
        let cm = CostModel::length();
        if let Some(r) = shortest_route(&g, &cm, a, c) {
            let mut at = a;
            let mut cost = 0.0;
            for &s in &r.path {
                prop_assert_eq!(g.seg(s).from, at);
                at = g.seg(s).to;
                cost += g.seg(s).len();
            }
            prop_assert_eq!(at, c);
            prop_assert!((cost - r.cost).abs() <= 1e-9 * cost.max(1.0));
            if let (Some(ab), Some(bc)) = (shortest_route(&g, &cm, a, b), shortest_route(&g, &cm, b, c)) {
                prop_assert!(r.cost <= ab.cost + bc.cost + 1e-9);
            }
        }
    }

    #[test]
    fn sector_plans_respect_their_limits(
        v_cap in 1.0..20.0f64,
        frac in 0.0..1.0f64,
        length in 0.5..200.0f64,
        exit_limit in 0.0..25.0f64,
        a in 0.5..3.0f64,
        b in 0.5..4.0f64,
    ) {
        let inp = SectorInput { v0: frac * v_cap, length, v_cap, exit_limit, a, b, b_emerg: 2.0 * b };
        let out = plan_sector_transit(&inp);
        let p = out.plan;
        prop_assert!(p.duration() >= 0.0);
        prop_assert!(p.v_peak <= v_cap + 1e-9);
        prop_assert!(p.v_exit <= exit_limit.min(v_cap) + 1e-9);
        if !out.emergency {
            prop_assert!(p.decel <= b + 1e-12);
        }
        let (x, v) = p.state_at(p.duration());
        prop_assert!((x - length).abs() <= 1e-6 * length.max(1.0));
        prop_assert!((v - p.v_exit).abs() <= 1e-9);
        let mut last = 0.0;
        for k in 1..=20 {
            let (x, v) = p.state_at(p.duration() * k as f64 / 20.0);
            prop_assert!(x + 1e-9 >= last);
            prop_assert!(v <= v_cap + 1e-9);
            last = x;
        }
    }

    #[test]
    fn destinations_avoid_zero_cells(weights in prop::collection::vec(prop_oneof![Just(0.0), 0.01..1.0f64], 2..8), u in 0.0..1.0f64) {
        let total: f64 = weights.iter().sum();
        prop_assume!(total > 0.0);
        let row: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let j = sample_destination(&row, u);
        prop_assert!(row[j] > 0.0);
    }
}

#[test]
fn bundled_scenarios_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if !name.ends_with(".json") {
            continue;
        }
        let raw: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        if name.ends_with(".model.json") {
            let g = NetworkGraph::from_json(&raw.to_string()).unwrap();
            assert!(podway::network::validate_graph(&g).is_empty(), "{name}");
        } else if raw.get("axes").is_some() {
            let plan = ExperimentPlan::load(&path).unwrap();
            assert!(!expand_plan(&plan).unwrap().is_empty(), "{name}");
        } else {
            let doc = ScenarioDocument::load(&path).unwrap();
            validate_scenario(&doc).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        seen += 1;
    }
    assert!(seen >= 6);
}
