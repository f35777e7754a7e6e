//! Guideway graph: nodes, one-way segments, sectorization and validation.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stations::{CapacitorSpec, StationSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Station,
    Capacitor,
    Fork,
    Join,
}

impl NodeKind {
    /// Required (in-degree, out-degree) at the graph level.
    pub fn degrees(self) -> (usize, usize) {
        match self {
            NodeKind::Fork => (1, 2),
            NodeKind::Join => (2, 1),
            NodeKind::Station | NodeKind::Capacitor => (1, 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    /// (x, y) in meters.
    pub position: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub id: SegmentId,
    pub from: NodeId,
    pub to: NodeId,
    /// Meters. Defaults to the Euclidean distance between the end nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    /// Speed limit, m/s.
    pub v_limit: f64,
    #[serde(default = "one")]
    pub sector_count: u32,
}

fn one() -> u32 {
    1
}

impl Segment {
    /// Length after defaulting; only valid on segments owned by a [`NetworkGraph`].
    pub fn len(&self) -> f64 {
        self.length.unwrap_or(f64::NAN)
    }

    pub fn sector_len(&self) -> f64 {
        self.len() / self.sector_count.max(1) as f64
    }
}

/// On-disk shape of a network model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub nodes: Vec<Node>,
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub stations: BTreeMap<NodeId, StationSpec>,
    #[serde(default)]
    pub capacitors: BTreeMap<NodeId, CapacitorSpec>,
}

/// Directed guideway graph. Immutable once built; indexes are precomputed.
#[derive(Clone, Debug)]
pub struct NetworkGraph {
    nodes: Vec<Node>,
    segments: Vec<Segment>,
    stations: BTreeMap<NodeId, StationSpec>,
    capacitors: BTreeMap<NodeId, CapacitorSpec>,
    node_index: HashMap<NodeId, usize>,
    segment_index: HashMap<SegmentId, usize>,
    out_segs: HashMap<NodeId, Vec<SegmentId>>,
    in_segs: HashMap<NodeId, Vec<SegmentId>>,
}

impl NetworkGraph {
    pub fn new(
        mut nodes: Vec<Node>,
        mut segments: Vec<Segment>,
        stations: BTreeMap<NodeId, StationSpec>,
        capacitors: BTreeMap<NodeId, CapacitorSpec>,
    ) -> Self {
        nodes.sort_by_key(|n| n.id);
        segments.sort_by_key(|s| s.id);
        let node_index: HashMap<NodeId, usize> =
            nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        for seg in &mut segments {
            if seg.length.is_none() {
                if let (Some(&a), Some(&b)) = (node_index.get(&seg.from), node_index.get(&seg.to)) {
                    let (pa, pb) = (nodes[a].position, nodes[b].position);
                    seg.length = Some(((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt());
                }
            }
        }
        let segment_index = segments.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
        let mut out_segs: HashMap<NodeId, Vec<SegmentId>> = HashMap::new();
        let mut in_segs: HashMap<NodeId, Vec<SegmentId>> = HashMap::new();
        for seg in &segments {
            out_segs.entry(seg.from).or_default().push(seg.id);
            in_segs.entry(seg.to).or_default().push(seg.id);
        }
        NetworkGraph {
            nodes,
            segments,
            stations,
            capacitors,
            node_index,
            segment_index,
            out_segs,
            in_segs,
        }
    }

    pub fn from_model(model: ModelFile) -> Self {
        Self::new(model.nodes, model.segments, model.stations, model.capacitors)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: ModelFile = serde_json::from_str(text).map_err(Error::parse)?;
        Ok(Self::from_model(model))
    }

    pub fn to_model(&self) -> ModelFile {
        ModelFile {
            nodes: self.nodes.clone(),
            segments: self.segments.clone(),
            stations: self.stations.clone(),
            capacitors: self.capacitors.clone(),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_model()).expect("model serializes")
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.node_index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn segment(&self, id: SegmentId) -> Option<&Segment> {
        self.segment_index.get(&id).map(|&i| &self.segments[i])
    }

    /// Panicking lookup for ids already known to be valid.
    pub fn seg(&self, id: SegmentId) -> &Segment {
        self.segment(id).unwrap_or_else(|| panic!("unknown segment {id}"))
    }

    pub fn kind(&self, id: NodeId) -> Option<NodeKind> {
        self.node(id).map(|n| n.kind)
    }

    pub fn out_segments(&self, node: NodeId) -> &[SegmentId] {
        self.out_segs.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn in_segments(&self, node: NodeId) -> &[SegmentId] {
        self.in_segs.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn stations(&self) -> &BTreeMap<NodeId, StationSpec> {
        &self.stations
    }

    pub fn capacitors(&self) -> &BTreeMap<NodeId, CapacitorSpec> {
        &self.capacitors
    }

    pub fn station_ids(&self) -> Vec<NodeId> {
        self.nodes_of_kind(NodeKind::Station)
    }

    pub fn capacitor_ids(&self) -> Vec<NodeId> {
        self.nodes_of_kind(NodeKind::Capacitor)
    }

    fn nodes_of_kind(&self, kind: NodeKind) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.kind == kind).map(|n| n.id).collect()
    }

    pub fn segment_between(&self, from: NodeId, to: NodeId) -> Option<SegmentId> {
        self.out_segments(from)
            .iter()
            .copied()
            .find(|&s| self.seg(s).to == to)
    }

    pub(crate) fn with_segments(&self, segments: Vec<Segment>) -> Self {
        Self::new(
            self.nodes.clone(),
            segments,
            self.stations.clone(),
            self.capacitors.clone(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    DuplicateNode { node: NodeId },
    DuplicateSegment { segment: SegmentId },
    DanglingEndpoint { segment: SegmentId, node: NodeId },
    SelfLoop { segment: SegmentId },
    ParallelSegments { from: NodeId, to: NodeId },
    NonPositiveLength { segment: SegmentId },
    NonPositiveSpeedLimit { segment: SegmentId },
    ZeroSectors { segment: SegmentId },
    Degree { node: NodeId, kind: NodeKind, in_degree: usize, out_degree: usize },
    Unreachable { from: NodeId, to: NodeId },
    MissingStationSpec { node: NodeId },
    MissingCapacitorSpec { node: NodeId },
    SpecOnWrongNode { node: NodeId },
    StationSpec { node: NodeId, reason: String },
    CapacitorSpec { node: NodeId, reason: String },
    NoStations,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateNode { node } => write!(f, "duplicate node id {node}"),
            Violation::DuplicateSegment { segment } => write!(f, "duplicate segment id {segment}"),
            Violation::DanglingEndpoint { segment, node } => {
                write!(f, "segment {segment} references unknown node {node}")
            }
            Violation::SelfLoop { segment } => write!(f, "segment {segment} is a self-loop"),
            Violation::ParallelSegments { from, to } => {
                write!(f, "more than one segment from {from} to {to}")
            }
            Violation::NonPositiveLength { segment } => {
                write!(f, "segment {segment} has non-positive length")
            }
            Violation::NonPositiveSpeedLimit { segment } => {
                write!(f, "segment {segment} has non-positive speed limit")
            }
            Violation::ZeroSectors { segment } => write!(f, "segment {segment} has zero sectors"),
            Violation::Degree { node, kind, in_degree, out_degree } => {
                let (i, o) = kind.degrees();
                write!(
                    f,
                    "{kind:?} node {node} has in/out degree {in_degree}/{out_degree}, expected {i}/{o}"
                )
            }
            Violation::Unreachable { from, to } => {
                write!(f, "graph is not strongly connected: {to} is unreachable from {from}")
            }
            Violation::MissingStationSpec { node } => write!(f, "station {node} has no station record"),
            Violation::MissingCapacitorSpec { node } => {
                write!(f, "capacitor {node} has no capacitor record")
            }
            Violation::SpecOnWrongNode { node } => {
                write!(f, "station/capacitor record for {node}, which is not of that kind")
            }
            Violation::StationSpec { node, reason } => write!(f, "station {node}: {reason}"),
            Violation::CapacitorSpec { node, reason } => write!(f, "capacitor {node}: {reason}"),
            Violation::NoStations => write!(f, "network has no stations"),
        }
    }
}

/// Every violated invariant; empty iff the graph can be simulated.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn validate_graph(g: &NetworkGraph) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut seen_nodes = BTreeSet::new();
    for n in g.nodes() {
        if !seen_nodes.insert(n.id) {
            report.push(Violation::DuplicateNode { node: n.id });
        }
    }
    let mut seen_segs = BTreeSet::new();
    let mut pairs = BTreeSet::new();
    for s in g.segments() {
        if !seen_segs.insert(s.id) {
            report.push(Violation::DuplicateSegment { segment: s.id });
        }
        for end in [s.from, s.to] {
            if g.node(end).is_none() {
                report.push(Violation::DanglingEndpoint { segment: s.id, node: end });
            }
        }
        if s.from == s.to {
            report.push(Violation::SelfLoop { segment: s.id });
        } else if !pairs.insert((s.from, s.to)) {
            report.push(Violation::ParallelSegments { from: s.from, to: s.to });
        }
        if !(s.len() > 0.0) {
            report.push(Violation::NonPositiveLength { segment: s.id });
        }
        if !(s.v_limit > 0.0) {
            report.push(Violation::NonPositiveSpeedLimit { segment: s.id });
        }
        if s.sector_count == 0 {
            report.push(Violation::ZeroSectors { segment: s.id });
        }
    }

    for n in g.nodes() {
        let (want_in, want_out) = n.kind.degrees();
        let (din, dout) = (g.in_segments(n.id).len(), g.out_segments(n.id).len());
        if din != want_in || dout != want_out {
            report.push(Violation::Degree {
                node: n.id,
                kind: n.kind,
                in_degree: din,
                out_degree: dout,
            });
        }
        match n.kind {
            NodeKind::Station => match g.stations().get(&n.id) {
                None => report.push(Violation::MissingStationSpec { node: n.id }),
                Some(spec) => {
                    if let Err(reason) = spec.check() {
                        report.push(Violation::StationSpec { node: n.id, reason });
                    }
                }
            },
            NodeKind::Capacitor => match g.capacitors().get(&n.id) {
                None => report.push(Violation::MissingCapacitorSpec { node: n.id }),
                Some(spec) => {
                    if let Err(reason) = spec.check() {
                        report.push(Violation::CapacitorSpec { node: n.id, reason });
                    }
                }
            },
            _ => {}
        }
    }
    for id in g.stations().keys() {
        if g.kind(*id) != Some(NodeKind::Station) {
            report.push(Violation::SpecOnWrongNode { node: *id });
        }
    }
    for id in g.capacitors().keys() {
        if g.kind(*id) != Some(NodeKind::Capacitor) {
            report.push(Violation::SpecOnWrongNode { node: *id });
        }
    }
    if g.station_ids().is_empty() {
        report.push(Violation::NoStations);
    }

    if let Some(root) = g.nodes().first().map(|n| n.id) {
        let fwd = reachable(g, root, false);
        let bwd = reachable(g, root, true);
        for n in g.nodes() {
            if !fwd.contains(&n.id) {
                report.push(Violation::Unreachable { from: root, to: n.id });
            }
            if !bwd.contains(&n.id) {
                report.push(Violation::Unreachable { from: n.id, to: root });
            }
        }
    }
    report
}

/// Nodes reachable from `start` (or that can reach it, when `reverse`).
pub fn reachable(g: &NetworkGraph, start: NodeId, reverse: bool) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(n) = queue.pop_front() {
        let segs = if reverse { g.in_segments(n) } else { g.out_segments(n) };
        for &s in segs {
            let seg = g.seg(s);
            let next = if reverse { seg.from } else { seg.to };
            if g.node(next).is_some() && seen.insert(next) {
                queue.push_back(next);
            }
        }
    }
    seen
}

/// Re-divides every segment into `max(1, round(length / target))` equal sectors.
pub fn sectorize(g: &NetworkGraph, target_sector_len: f64) -> NetworkGraph {
    assert!(target_sector_len > 0.0, "target sector length must be positive");
    let segments = g
        .segments()
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.sector_count = ((s.len() / target_sector_len).round() as u32).max(1);
            s
        })
        .collect();
    g.with_segments(segments)
}

/// Sector length a given factor shorter than the planned separation.
pub fn default_sector_len(separation: f64, factor: f64) -> Result<f64> {
    if !(factor > 0.0) {
        return Err(Error::Config(format!("sector factor must be positive, got {factor}")));
    }
    if !(separation > 0.0) {
        return Err(Error::Config(format!("separation must be positive, got {separation}")));
    }
    Ok(separation / factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stations::StationLayout;

    pub(crate) fn station_spec() -> StationSpec {
        StationSpec {
            layout: StationLayout::StubBerths,
            berths: 2,
            in_buffer: 1,
            out_buffer: 1,
            spur_len_m: 10.0,
        }
    }

    fn node(id: u32, kind: NodeKind, x: f64, y: f64) -> Node {
        Node { id: NodeId(id), kind, position: [x, y] }
    }

    fn seg(id: u32, from: u32, to: u32, len: f64) -> Segment {
        Segment {
            id: SegmentId(id),
            from: NodeId(from),
            to: NodeId(to),
            length: Some(len),
            v_limit: 10.0,
            sector_count: 1,
        }
    }

    fn two_station_cycle() -> NetworkGraph {
        let stations = BTreeMap::from([(NodeId(0), station_spec()), (NodeId(1), station_spec())]);
        NetworkGraph::new(
            vec![node(0, NodeKind::Station, 0.0, 0.0), node(1, NodeKind::Station, 100.0, 0.0)],
            vec![seg(0, 0, 1, 100.0), seg(1, 1, 0, 100.0)],
            stations,
            BTreeMap::new(),
        )
    }

    #[test]
    fn smallest_legal_network_validates() {
        let report = validate_graph(&two_station_cycle());
        assert!(report.is_empty(), "{report}");
    }

    #[test]
    fn fork_with_one_exit_is_flagged() {
        let stations = BTreeMap::from([(NodeId(0), station_spec())]);
        let g = NetworkGraph::new(
            vec![node(0, NodeKind::Station, 0.0, 0.0), node(1, NodeKind::Fork, 50.0, 0.0)],
            vec![seg(0, 0, 1, 50.0), seg(1, 1, 0, 50.0)],
            stations,
            BTreeMap::new(),
        );
        let report = validate_graph(&g);
        assert!(report.violations.iter().any(|v| matches!(
            v,
            Violation::Degree { node: NodeId(1), kind: NodeKind::Fork, in_degree: 1, out_degree: 1 }
        )));
    }

    #[test]
    fn length_defaults_to_euclidean() {
        let mut g = two_station_cycle().to_model();
        g.nodes[1].position = [30.0, 40.0];
        g.segments[0].length = None;
        let g = NetworkGraph::from_model(g);
        assert!((g.seg(SegmentId(0)).len() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"nodes": [], "segments": [], "extra": 1}"#;
        assert!(NetworkGraph::from_json(text).is_err());
    }

    #[test]
    fn sectorize_rounds_with_floor_of_one() {
        let mut m = two_station_cycle().to_model();
        m.segments[0].length = Some(95.0);
        m.segments[1].length = Some(3.0);
        let g = sectorize(&NetworkGraph::from_model(m), 10.0);
        assert_eq!(g.seg(SegmentId(0)).sector_count, 10);
        assert!((g.seg(SegmentId(0)).sector_len() - 9.5).abs() < 1e-12);
        assert_eq!(g.seg(SegmentId(1)).sector_count, 1);

        let g = sectorize(&two_station_cycle(), 10.0);
        assert_eq!(g.seg(SegmentId(0)).sector_count, 10);
        assert!((g.seg(SegmentId(0)).sector_len() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn default_sector_len_examples() {
        assert!((default_sector_len(10.0, 2.5).unwrap() - 4.0).abs() < 1e-12);
        assert!((default_sector_len(10.0, 2.0).unwrap() - 5.0).abs() < 1e-12);
        assert!((default_sector_len(12.0, 3.0).unwrap() - 4.0).abs() < 1e-12);
        assert!(default_sector_len(10.0, 0.0).is_err());
    }
}
