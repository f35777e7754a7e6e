//! Generators for the four benchmark layouts.
//!
//! Every station sits off-line between a fork and a join with a bypass, so
//! through traffic never passes a berth. Lengths are set explicitly; node
//! positions are only cosmetic.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Node, NodeId, NodeKind, NetworkGraph, Segment, SegmentId};
use crate::stations::{CapacitorSpec, StationLayout, StationSpec};

const JUNCTION_LINK_M: f64 = 15.0;
const OFFLINE_M: f64 = 60.0;
const SPUR_M: f64 = 35.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BenchmarkKind {
    CenterPeriphery { spokes: u32, radius_m: f64 },
    RectGrid { rows: u32, cols: u32, block_m: f64 },
    Linear { stations: u32, spacing_m: f64 },
    Ring { stations: u32, spacing_m: f64 },
}

/// Knobs shared by all layouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchParams {
    pub v_limit: f64,
    pub station: StationSpec,
    pub capacitor: CapacitorSpec,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams {
            v_limit: 10.0,
            station: StationSpec {
                layout: StationLayout::StubBerths,
                berths: 3,
                in_buffer: 1,
                out_buffer: 1,
                spur_len_m: 15.0,
            },
            capacitor: CapacitorSpec { capacity: 40, initial_vehicles: 0, spur_len_m: 15.0 },
        }
    }
}

/// A generated layout with named landmarks.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub graph: NetworkGraph,
    pub labels: BTreeMap<String, NodeId>,
    /// Main-line segment used for flow counts.
    pub count_segment: SegmentId,
}

impl Benchmark {
    pub fn node(&self, label: &str) -> NodeId {
        *self
            .labels
            .get(label)
            .unwrap_or_else(|| panic!("no node labelled {label}"))
    }

    pub fn segment(&self, from: &str, to: &str) -> SegmentId {
        self.graph
            .segment_between(self.node(from), self.node(to))
            .unwrap_or_else(|| panic!("no segment {from} -> {to}"))
    }
}

pub fn generate_benchmark(kind: &BenchmarkKind, params: &BenchParams) -> Result<NetworkGraph> {
    generate_labeled(kind, params).map(|b| b.graph)
}

pub fn generate_labeled(kind: &BenchmarkKind, params: &BenchParams) -> Result<Benchmark> {
    check(kind, params)?;
    let mut b = Builder::new(params);
    let count_segment = match *kind {
        BenchmarkKind::Ring { stations, spacing_m } => ring(&mut b, stations, spacing_m),
        BenchmarkKind::Linear { stations, spacing_m } => linear(&mut b, stations, spacing_m),
        BenchmarkKind::RectGrid { rows, cols, block_m } => grid(&mut b, rows, cols, block_m),
        BenchmarkKind::CenterPeriphery { spokes, radius_m } => center(&mut b, spokes, radius_m),
    };
    Ok(Benchmark {
        graph: NetworkGraph::new(b.nodes, b.segments, b.stations, b.capacitors),
        labels: b.labels,
        count_segment,
    })
}

/// Number of stations a layout produces.
pub fn station_count(kind: &BenchmarkKind) -> u32 {
    match *kind {
        BenchmarkKind::Ring { stations, .. } | BenchmarkKind::Linear { stations, .. } => stations,
        BenchmarkKind::RectGrid { rows, cols, .. } => rows * (cols - 1) + cols * (rows - 1),
        BenchmarkKind::CenterPeriphery { spokes, .. } => spokes + 1,
    }
}

fn check(kind: &BenchmarkKind, params: &BenchParams) -> Result<()> {
    let bad = |m: String| Err(Error::Config(m));
    if !(params.v_limit > 0.0) {
        return bad("v_limit must be positive".into());
    }
    params.station.check().map_err(Error::Config)?;
    params.capacitor.check().map_err(Error::Config)?;
    match *kind {
        BenchmarkKind::Ring { stations, spacing_m } if stations < 2 || !(spacing_m >= 100.0) => {
            bad(format!("ring needs stations >= 2 and spacing_m >= 100, got {stations}, {spacing_m}"))
        }
        BenchmarkKind::Linear { stations, spacing_m } if stations < 2 || !(spacing_m >= 150.0) => bad(
            format!("linear needs stations >= 2 and spacing_m >= 150, got {stations}, {spacing_m}"),
        ),
        BenchmarkKind::RectGrid { rows, cols, block_m } if rows < 2 || cols < 2 || !(block_m >= 100.0) => {
            bad(format!("grid needs rows, cols >= 2 and block_m >= 100, got {rows}x{cols}, {block_m}"))
        }
        BenchmarkKind::CenterPeriphery { spokes, radius_m } if spokes < 2 || !(radius_m >= 100.0) => {
            bad(format!("center-periphery needs spokes >= 2 and radius_m >= 100, got {spokes}, {radius_m}"))
        }
        _ => Ok(()),
    }
}

struct Builder<'a> {
    params: &'a BenchParams,
    nodes: Vec<Node>,
    segments: Vec<Segment>,
    stations: BTreeMap<NodeId, StationSpec>,
    capacitors: BTreeMap<NodeId, CapacitorSpec>,
    labels: BTreeMap<String, NodeId>,
}

impl<'a> Builder<'a> {
    fn new(params: &'a BenchParams) -> Self {
        Builder {
            params,
            nodes: Vec::new(),
            segments: Vec::new(),
            stations: BTreeMap::new(),
            capacitors: BTreeMap::new(),
            labels: BTreeMap::new(),
        }
    }

    fn node(&mut self, kind: NodeKind, position: [f64; 2], label: Option<String>) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { id, kind, position });
        match kind {
            NodeKind::Station => {
                self.stations.insert(id, self.params.station.clone());
            }
            NodeKind::Capacitor => {
                self.capacitors.insert(id, self.params.capacitor.clone());
            }
            _ => {}
        }
        if let Some(l) = label {
            self.labels.insert(l, id);
        }
        id
    }

    fn seg(&mut self, from: NodeId, to: NodeId, length: f64) -> SegmentId {
        let id = SegmentId(self.segments.len() as u32);
        self.segments.push(Segment {
            id,
            from,
            to,
            length: Some(length),
            v_limit: self.params.v_limit,
            sector_count: 1,
        });
        id
    }

    /// Fork, off-line node and join with a bypass; returns (fork, join).
    fn offline(&mut self, kind: NodeKind, at: [f64; 2], dir: [f64; 2], names: [String; 3]) -> (NodeId, NodeId) {
        let [fname, sname, jname] = names;
        let p = |k: f64, side: f64| [at[0] + dir[0] * k - dir[1] * side, at[1] + dir[1] * k + dir[0] * side];
        let f = self.node(NodeKind::Fork, p(0.0, 0.0), Some(fname));
        let s = self.node(kind, p(OFFLINE_M / 2.0, 15.0), Some(sname));
        let j = self.node(NodeKind::Join, p(OFFLINE_M, 0.0), Some(jname));
        self.seg(f, s, SPUR_M);
        self.seg(s, j, SPUR_M);
        self.seg(f, j, OFFLINE_M);
        (f, j)
    }
}

/// One-way loop: an off-line station every `spacing`, then a capacitor.
fn ring(b: &mut Builder, n: u32, spacing: f64) -> SegmentId {
    let slots = n + 1;
    let radius = slots as f64 * spacing / TAU;
    let mut ends = Vec::new();
    for i in 0..slots {
        let a = TAU * i as f64 / slots as f64;
        let at = [radius * a.cos(), radius * a.sin()];
        let dir = [-a.sin(), a.cos()];
        let (kind, tag) = if i < n { (NodeKind::Station, format!("S{i}")) } else { (NodeKind::Capacitor, "K".into()) };
        let names = if i < n {
            [format!("F{i}"), tag, format!("J{i}")]
        } else {
            ["FK".into(), tag, "JK".into()]
        };
        ends.push(b.offline(kind, at, dir, names));
    }
    let mut count = None;
    for i in 0..slots as usize {
        let (_, j) = ends[i];
        let (f_next, _) = ends[(i + 1) % slots as usize];
        let s = b.seg(j, f_next, spacing - OFFLINE_M);
        count.get_or_insert(s);
    }
    count.expect("ring has at least one link")
}

/// Eastbound line with off-line stations, a westbound return line fed by a
/// crossover after each station but the last, and a capacitor at the west end.
fn linear(b: &mut Builder, n: u32, spacing: f64) -> SegmentId {
    let mut east = Vec::new();
    for i in 0..n {
        let x = i as f64 * spacing;
        let (f, j) = b.offline(NodeKind::Station, [x, 0.0], [1.0, 0.0], [format!("F{i}"), format!("S{i}"), format!("J{i}")]);
        let xfork = if i + 1 < n {
            Some(b.node(NodeKind::Fork, [x + OFFLINE_M + 20.0, 0.0], Some(format!("X{i}"))))
        } else {
            None
        };
        east.push((f, j, xfork));
    }
    let mut west = Vec::new();
    for i in 0..n - 1 {
        let x = i as f64 * spacing + OFFLINE_M + 20.0;
        west.push(b.node(NodeKind::Join, [x, -30.0], Some(format!("Y{i}"))));
    }
    let (fk, jk) = b.offline(NodeKind::Capacitor, [-20.0, -30.0], [-1.0, 0.0], ["FK".into(), "K".into(), "JK".into()]);

    let mut count = None;
    for i in 0..n as usize {
        let (_, j, xfork) = east[i];
        match xfork {
            Some(x) => {
                b.seg(j, x, 20.0);
                let (f_next, _, _) = east[i + 1];
                let s = b.seg(x, f_next, spacing - OFFLINE_M - 20.0);
                count.get_or_insert(s);
                b.seg(x, west[i], 30.0);
            }
            None => {
                // turnaround loop at the east end
                b.seg(j, west[i - 1], spacing);
            }
        }
    }
    for i in (1..west.len()).rev() {
        b.seg(west[i], west[i - 1], spacing);
    }
    b.seg(west[0], fk, OFFLINE_M + 40.0);
    let (f0, _, _) = east[0];
    b.seg(jk, f0, 80.0);
    count.expect("linear has at least two stations")
}

/// Join chain feeding a short hub segment that feeds a fork chain.
/// Returns the node each input enters and each output leaves from.
fn junction(b: &mut Builder, at: [f64; 2], ins: usize, outs: usize, name: &str) -> (Vec<NodeId>, Vec<NodeId>) {
    let mut in_nodes = Vec::new();
    let mut prev = None;
    for m in 0..ins - 1 {
        let j = b.node(NodeKind::Join, [at[0] - 5.0 * (ins - 1 - m) as f64, at[1] - 3.0], Some(format!("{name}j{m}")));
        match prev {
            None => in_nodes.extend([j, j]),
            Some(p) => {
                b.seg(p, j, JUNCTION_LINK_M);
                in_nodes.push(j);
            }
        }
        prev = Some(j);
    }
    let last_join = prev.expect("junction has at least two inputs");
    let mut out_nodes = Vec::new();
    let mut prev = last_join;
    for m in 0..outs - 1 {
        let f = b.node(NodeKind::Fork, [at[0] + 5.0 * (m + 1) as f64, at[1] + 3.0], Some(format!("{name}f{m}")));
        b.seg(prev, f, JUNCTION_LINK_M);
        out_nodes.push(f);
        prev = f;
    }
    out_nodes.push(prev);
    (in_nodes, out_nodes)
}

/// Grid of junctions; every undirected edge becomes two one-way links, and
/// the link from the lower to the higher junction id carries a station.
fn grid(b: &mut Builder, rows: u32, cols: u32, block: f64) -> SegmentId {
    let id = |r: u32, c: u32| (r * cols + c) as usize;
    let count = (rows * cols) as usize;
    let mut neighbors = vec![Vec::new(); count];
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                neighbors[id(r, c)].push(id(r, c + 1));
                neighbors[id(r, c + 1)].push(id(r, c));
            }
            if r + 1 < rows {
                neighbors[id(r, c)].push(id(r + 1, c));
                neighbors[id(r + 1, c)].push(id(r, c));
            }
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }
    let pos = |k: usize| [(k as u32 % cols) as f64 * block, (k as u32 / cols) as f64 * block];
    let mut ports = Vec::new();
    for k in 0..count {
        let deg = neighbors[k].len();
        ports.push(junction(b, pos(k), deg, deg, &format!("G{k}")));
    }
    let first_edge = (0usize, 1usize);
    let mut count_seg = None;
    for i in 0..count {
        for (oi, &j) in neighbors[i].iter().enumerate() {
            let from = ports[i].1[oi];
            let ii = neighbors[j].iter().position(|&x| x == i).expect("symmetric adjacency");
            let to = ports[j].0[ii];
            let (pi, pj) = (pos(i), pos(j));
            let dir = [(pj[0] - pi[0]) / block, (pj[1] - pi[1]) / block];
            let pre = ((block - OFFLINE_M) / 2.0).max(20.0);
            let mid = [pi[0] + dir[0] * pre, pi[1] + dir[1] * pre];
            let offline = if i < j {
                Some((NodeKind::Station, [format!("F{i}_{j}"), format!("S{i}_{j}"), format!("J{i}_{j}")]))
            } else if (j, i) == first_edge {
                Some((NodeKind::Capacitor, ["FK".into(), "K".into(), "JK".into()]))
            } else {
                None
            };
            match offline {
                Some((kind, names)) => {
                    let (f, jn) = b.offline(kind, mid, dir, names);
                    b.seg(from, f, pre);
                    b.seg(jn, to, pre);
                }
                None => {
                    let s = b.seg(from, to, block);
                    count_seg.get_or_insert(s);
                }
            }
        }
    }
    count_seg.expect("grid has a plain link")
}

/// Hub junction with one loop per terminal station, plus a center-station
/// loop and a capacitor loop.
fn center(b: &mut Builder, spokes: u32, radius: f64) -> SegmentId {
    let loops = spokes as usize + 2;
    let (ins, outs) = junction(b, [0.0, 0.0], loops, loops, "H");
    b.labels.insert("H".into(), ins[loops - 1]);
    let mut count = None;
    for l in 0..loops {
        let (kind, label, len) = if l < spokes as usize {
            (NodeKind::Station, format!("P{l}"), radius)
        } else if l == spokes as usize {
            (NodeKind::Station, "C".into(), 40.0)
        } else {
            (NodeKind::Capacitor, "K".into(), 40.0)
        };
        let a = TAU * l as f64 / loops as f64;
        let t = b.node(kind, [len * a.cos(), len * a.sin()], Some(label));
        let s = b.seg(outs[l], t, len);
        b.seg(t, ins[l], len);
        count.get_or_insert(s);
    }
    count.expect("at least one loop")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{reachable, validate_graph};

    fn gen(kind: BenchmarkKind) -> Benchmark {
        let b = generate_labeled(&kind, &BenchParams::default()).unwrap();
        let report = validate_graph(&b.graph);
        assert!(report.is_empty(), "{kind:?}: {report}");
        b
    }

    fn succ(b: &Benchmark, label: &str) -> Vec<NodeId> {
        let mut v: Vec<_> = b.graph.out_segments(b.node(label)).iter().map(|&s| b.graph.seg(s).to).collect();
        v.sort();
        v
    }

    fn ids(b: &Benchmark, labels: &[&str]) -> Vec<NodeId> {
        let mut v: Vec<_> = labels.iter().map(|l| b.node(l)).collect();
        v.sort();
        v
    }

    #[test]
    fn grid_2x2_station_count_and_adjacency() {
        let kind = BenchmarkKind::RectGrid { rows: 2, cols: 2, block_m: 200.0 };
        let b = gen(kind.clone());
        assert_eq!(b.graph.station_ids().len(), 4);
        assert_eq!(station_count(&kind), 4);
        assert_eq!(b.graph.capacitor_ids().len(), 1);
        // junction 0 joins links from 1 and 2, forks toward 1 and 2
        assert_eq!(succ(&b, "G0j0"), ids(&b, &["G0f0"]));
        assert_eq!(succ(&b, "G0f0"), ids(&b, &["F0_1", "F0_2"]));
        assert_eq!(succ(&b, "F0_1"), ids(&b, &["S0_1", "J0_1"]));
        assert_eq!(succ(&b, "S0_1"), ids(&b, &["J0_1"]));
        assert_eq!(succ(&b, "J0_1"), ids(&b, &["G1j0"]));
        // reverse of the first edge carries the capacitor
        assert_eq!(succ(&b, "G1f0"), ids(&b, &["FK", "F1_3"]));
        assert_eq!(succ(&b, "JK"), ids(&b, &["G0j0"]));
        // 3 -> 2 is a plain link
        let g3_to_2 = b.graph.segment_between(b.node("G3f0"), b.node("G2j0")).unwrap();
        assert_eq!(b.graph.seg(g3_to_2).len(), 200.0);
    }

    #[test]
    fn grid_3x3_station_formula() {
        let kind = BenchmarkKind::RectGrid { rows: 3, cols: 3, block_m: 150.0 };
        let b = gen(kind.clone());
        assert_eq!(b.graph.station_ids().len() as u32, station_count(&kind));
        assert_eq!(station_count(&kind), 12);
    }

    #[test]
    fn linear_3_adjacency() {
        let b = gen(BenchmarkKind::Linear { stations: 3, spacing_m: 500.0 });
        assert_eq!(b.graph.station_ids().len(), 3);
        assert_eq!(succ(&b, "F0"), ids(&b, &["S0", "J0"]));
        assert_eq!(succ(&b, "J0"), ids(&b, &["X0"]));
        assert_eq!(succ(&b, "X0"), ids(&b, &["F1", "Y0"]));
        assert_eq!(succ(&b, "X1"), ids(&b, &["F2", "Y1"]));
        assert_eq!(succ(&b, "J2"), ids(&b, &["Y1"]));
        assert_eq!(succ(&b, "Y1"), ids(&b, &["Y0"]));
        assert_eq!(succ(&b, "Y0"), ids(&b, &["FK"]));
        assert_eq!(succ(&b, "FK"), ids(&b, &["K", "JK"]));
        assert_eq!(succ(&b, "JK"), ids(&b, &["F0"]));
        assert_eq!(b.graph.nodes().len(), 3 * 3 + 2 + 2 + 3);
    }

    #[test]
    fn center_periphery_hub_reachable() {
        let b = gen(BenchmarkKind::CenterPeriphery { spokes: 4, radius_m: 300.0 });
        let hub = b.node("H");
        for n in b.graph.nodes() {
            assert!(reachable(&b.graph, n.id, false).contains(&hub));
        }
        assert_eq!(b.graph.station_ids().len(), 5);
    }

    #[test]
    fn ring_closes() {
        let b = gen(BenchmarkKind::Ring { stations: 4, spacing_m: 200.0 });
        assert_eq!(b.graph.station_ids().len(), 4);
        assert_eq!(succ(&b, "JK"), ids(&b, &["F0"]));
        assert_eq!(b.graph.seg(b.count_segment).from, b.node("J0"));
    }

    #[test]
    fn deterministic_output() {
        let kind = BenchmarkKind::Linear { stations: 5, spacing_m: 300.0 };
        let a = generate_benchmark(&kind, &BenchParams::default()).unwrap().to_json_pretty();
        let c = generate_benchmark(&kind, &BenchParams::default()).unwrap().to_json_pretty();
        assert_eq!(a, c);
    }

    #[test]
    fn rejects_small_grid() {
        let kind = BenchmarkKind::RectGrid { rows: 1, cols: 3, block_m: 200.0 };
        assert!(generate_benchmark(&kind, &BenchParams::default()).is_err());
    }
}
