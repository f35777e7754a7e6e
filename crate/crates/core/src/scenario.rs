//! Scenario documents: everything one replication needs, in one JSON file.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{generate_labeled, BenchParams, BenchmarkKind};
use crate::demand::{DemandModel, DemandSection};
use crate::error::{Error, Result};
use crate::fleet::{AllocationRule, EmptyRule, FleetPolicy};
use crate::kernel::event::EventKind;
use crate::motion::{KeepingRule, MergeRule, VehicleSpec};
use crate::network::{default_sector_len, sectorize, validate_graph, ModelFile, NetworkGraph, SegmentId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSource {
    pub layout: BenchmarkKind,
    #[serde(default)]
    pub params: BenchParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSource {
    /// Model file, relative to the scenario file.
    Path(PathBuf),
    Inline(ModelFile),
    Benchmark(BenchmarkSource),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Capacitors,
    Stations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetSection {
    pub size: u32,
    pub placement: Placement,
    pub allocation: AllocationRule,
    pub empty_rule: EmptyRule,
    pub stay_cap: u32,
    pub rebalance_threshold: i64,
    pub neighborhood_m: Option<f64>,
}

impl Default for FleetSection {
    fn default() -> Self {
        let p = FleetPolicy::default();
        FleetSection {
            size: 10,
            placement: Placement::Capacitors,
            allocation: p.allocation,
            empty_rule: p.empty_rule,
            stay_cap: p.stay_cap,
            rebalance_threshold: p.rebalance_threshold,
            neighborhood_m: p.neighborhood_m,
        }
    }
}

impl FleetSection {
    pub fn policy(&self) -> FleetPolicy {
        FleetPolicy {
            allocation: self.allocation,
            empty_rule: self.empty_rule,
            stay_cap: self.stay_cap,
            rebalance_threshold: self.rebalance_threshold,
            neighborhood_m: self.neighborhood_m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionSection {
    pub rule: KeepingRule,
    /// Target sector length; defaults to the static separation divided by
    /// `sector_factor`.
    pub sector_len_m: Option<f64>,
    pub sector_factor: f64,
    pub merge_rule: MergeRule,
    /// Check vehicle separation after every event.
    pub safety_check: bool,
}

impl Default for MotionSection {
    fn default() -> Self {
        MotionSection {
            rule: KeepingRule::Optimal,
            sector_len_m: None,
            sector_factor: 2.5,
            merge_rule: MergeRule::FirstArrival,
            safety_check: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureSpec {
    pub segment: SegmentId,
    pub t_fail_s: f64,
    #[serde(default)]
    pub t_restore_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingSection {
    pub w_len: f64,
    pub w_time: f64,
    pub w_cong: f64,
    pub congestion_horizon_s: f64,
    /// Re-plan at every fork with current congestion.
    pub dynamic: bool,
    pub failures: Vec<FailureSpec>,
}

impl Default for RoutingSection {
    fn default() -> Self {
        RoutingSection {
            w_len: 1.0,
            w_time: 0.0,
            w_cong: 0.0,
            congestion_horizon_s: 60.0,
            dynamic: false,
            failures: Vec::new(),
        }
    }
}

/// Which event kinds the trace keeps: `"all"` or a list of kinds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Registration {
    Keyword(String),
    Kinds(BTreeSet<EventKind>),
}

impl Default for Registration {
    fn default() -> Self {
        Registration::Keyword("all".into())
    }
}

impl Registration {
    pub fn includes(&self, kind: EventKind) -> bool {
        match self {
            Registration::Keyword(_) => true,
            Registration::Kinds(k) => k.contains(&kind),
        }
    }

    fn check(&self) -> Option<String> {
        match self {
            Registration::Keyword(w) if w != "all" => {
                Some(format!("registration must be \"all\" or a list of event kinds, got {w:?}"))
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub horizon_s: f64,
    pub warmup_s: f64,
    pub seed: u64,
    pub trace: bool,
    pub queue_bin_s: f64,
    /// Segment whose exits are counted for line flow.
    pub count_segment: Option<SegmentId>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            horizon_s: 7200.0,
            warmup_s: 0.0,
            seed: 1,
            trace: false,
            queue_bin_s: 60.0,
            count_segment: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub network: NetworkSource,
    #[serde(default)]
    pub demand: DemandSection,
    #[serde(default)]
    pub vehicles: VehicleSpec,
    #[serde(default)]
    pub fleet: FleetSection,
    #[serde(default)]
    pub motion: MotionSection,
    #[serde(default)]
    pub routing: RoutingSection,
    #[serde(default)]
    pub registration: Registration,
    #[serde(default)]
    pub run: RunSection,
}

impl ScenarioDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(Error::parse)
    }

    /// Read a scenario and inline a network given by path, so the document is
    /// self-contained.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut doc = Self::from_json(&text)?;
        if let NetworkSource::Path(p) = &doc.network {
            let full = path.parent().unwrap_or(Path::new(".")).join(p);
            let model_text = fs::read_to_string(&full).map_err(|e| Error::io(&full, e))?;
            let model: ModelFile = serde_json::from_str(&model_text).map_err(Error::parse)?;
            doc.network = NetworkSource::Inline(model);
        }
        Ok(doc)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("scenario serializes")
    }
}

/// A validated scenario ready to simulate.
#[derive(Clone, Debug)]
pub struct Model {
    /// Sectorized guideway.
    pub graph: NetworkGraph,
    pub demand: DemandModel,
    pub vehicle: VehicleSpec,
    pub fleet: FleetSection,
    pub policy: FleetPolicy,
    pub motion: MotionSection,
    pub routing: RoutingSection,
    pub registration: Registration,
    pub run: RunSection,
}

/// The graph plus, for benchmarks, the segment used for line-flow counts.
fn network_of(doc: &ScenarioDocument) -> Result<(NetworkGraph, Option<SegmentId>)> {
    match &doc.network {
        NetworkSource::Inline(m) => Ok((NetworkGraph::from_model(m.clone()), None)),
        NetworkSource::Benchmark(b) => generate_labeled(&b.layout, &b.params).map(|b| (b.graph, Some(b.count_segment))),
        NetworkSource::Path(p) => Err(Error::Config(format!(
            "network path {} must be resolved with ScenarioDocument::load",
            p.display()
        ))),
    }
}

/// Cross-check every section and build the runnable model. All problems are
/// reported together.
pub fn validate_scenario(doc: &ScenarioDocument) -> Result<Model> {
    let (graph, bench_count) = network_of(doc)?;
    let mut errs: Vec<String> = validate_graph(&graph).violations.iter().map(|v| v.to_string()).collect();

    errs.extend(doc.vehicles.check());
    let stations = graph.station_ids();
    let demand = match doc.demand.build(&stations) {
        Ok(d) => {
            errs.extend(d.check(doc.run.horizon_s, doc.vehicles.capacity));
            Some(d)
        }
        Err(e) => {
            errs.push(e);
            None
        }
    };
    let policy = doc.fleet.policy();
    errs.extend(policy.check());

    let slots: u64 = match doc.fleet.placement {
        Placement::Capacitors => graph.capacitors().values().map(|c| c.capacity as u64).sum(),
        Placement::Stations => {
            graph.stations().values().map(|s| s.berths as u64).sum::<u64>()
                + graph.capacitors().values().map(|c| c.capacity as u64).sum::<u64>()
        }
    };
    if doc.fleet.size as u64 > slots {
        errs.push(format!("fleet size {} exceeds the {slots} parking slots available", doc.fleet.size));
    }
    if doc.fleet.empty_rule == EmptyRule::ReturnToCapacitor && graph.capacitors().is_empty() {
        errs.push("empty_rule return_to_capacitor needs at least one capacitor".into());
    }

    let run = &doc.run;
    if !(run.horizon_s > 0.0) {
        errs.push("run.horizon_s must be positive".into());
    }
    if !(run.warmup_s >= 0.0 && run.warmup_s < run.horizon_s) {
        errs.push(format!("run.warmup_s must lie in [0, horizon), got {}", run.warmup_s));
    }
    if !(run.queue_bin_s > 0.0) {
        errs.push("run.queue_bin_s must be positive".into());
    }
    if let Some(s) = run.count_segment {
        if graph.segment(s).is_none() {
            errs.push(format!("run.count_segment {s} does not exist"));
        }
    }

    let r = &doc.routing;
    if [r.w_len, r.w_time, r.w_cong].iter().any(|w| !(*w >= 0.0)) || !(r.w_len + r.w_time > 0.0) {
        errs.push("routing weights must be non-negative with w_len + w_time > 0".into());
    }
    if !(r.congestion_horizon_s > 0.0) {
        errs.push("routing.congestion_horizon_s must be positive".into());
    }
    for f in &r.failures {
        if graph.segment(f.segment).is_none() {
            errs.push(format!("failure names unknown segment {}", f.segment));
        }
        if !(f.t_fail_s >= 0.0) {
            errs.push(format!("failure of {} has a negative time", f.segment));
        }
        if let Some(tr) = f.t_restore_s {
            if !(tr > f.t_fail_s) {
                errs.push(format!("failure of {} is restored before it fails", f.segment));
            }
        }
    }
    errs.extend(doc.registration.check());

    let sector_len = match doc.motion.sector_len_m {
        Some(l) if l > 0.0 => Some(l),
        Some(l) => {
            errs.push(format!("motion.sector_len_m must be positive, got {l}"));
            None
        }
        None => match default_sector_len(doc.vehicles.s_static, doc.motion.sector_factor) {
            Ok(l) => Some(l),
            Err(e) => {
                errs.push(e.to_string());
                None
            }
        },
    };

    if !errs.is_empty() {
        return Err(Error::Validation(errs));
    }
    let graph = sectorize(&graph, sector_len.expect("checked above"));
    Ok(Model {
        graph,
        demand: demand.expect("checked above"),
        vehicle: doc.vehicles.clone(),
        fleet: doc.fleet.clone(),
        policy,
        motion: doc.motion.clone(),
        routing: doc.routing.clone(),
        registration: doc.registration.clone(),
        run: RunSection { count_segment: doc.run.count_segment.or(bench_count), ..doc.run.clone() },
    })
}
