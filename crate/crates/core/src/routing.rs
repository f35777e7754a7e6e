//! Route computation over the guideway graph.
//!
//! A route is fixed by its end nodes plus the branch taken at every fork on
//! the way; everything between forks is forced by the topology.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::network::{NetworkGraph, NodeId, NodeKind, SegmentId};
use crate::VehicleId;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub origin: NodeId,
    pub destination: NodeId,
    pub fork_choices: Vec<(NodeId, SegmentId)>,
}

impl Route {
    /// Route that follows `path` (consecutive segments) from `origin`.
    pub fn from_path(g: &NetworkGraph, origin: NodeId, path: &[SegmentId]) -> Route {
        let destination = path.last().map(|&s| g.seg(s).to).unwrap_or(origin);
        let fork_choices = path
            .iter()
            .filter_map(|&s| {
                let from = g.seg(s).from;
                (g.kind(from) == Some(NodeKind::Fork)).then_some((from, s))
            })
            .collect();
        Route { origin, destination, fork_choices }
    }

    /// Segment sequence induced by the fork choices, or `None` if the choices
    /// do not lead to the destination.
    pub fn expand(&self, g: &NetworkGraph) -> Option<Vec<SegmentId>> {
        let mut path = Vec::new();
        let mut at = self.origin;
        let mut choices = self.fork_choices.iter();
        let limit = g.segments().len() * (self.fork_choices.len() + 1) + 1;
        while at != self.destination {
            let outs = g.out_segments(at);
            let next = match outs {
                [] => return None,
                [only] => *only,
                _ => {
                    let &(fork, seg) = choices.next()?;
                    if fork != at || !outs.contains(&seg) {
                        return None;
                    }
                    seg
                }
            };
            path.push(next);
            at = g.seg(next).to;
            if path.len() > limit {
                return None;
            }
        }
        choices.next().is_none().then_some(path)
    }
}

/// Weights of the segment cost and the per-replication overlay (failures,
/// congestion).
#[derive(Clone, Debug, PartialEq)]
pub struct CostModel {
    pub w_len: f64,
    pub w_time: f64,
    pub w_cong: f64,
    failed: BTreeSet<SegmentId>,
    congestion: HashMap<SegmentId, f64>,
}

impl CostModel {
    pub fn new(w_len: f64, w_time: f64, w_cong: f64) -> Self {
        CostModel { w_len, w_time, w_cong, failed: BTreeSet::new(), congestion: HashMap::new() }
    }

    /// Plain segment length.
    pub fn length() -> Self {
        Self::new(1.0, 0.0, 0.0)
    }

    pub fn set_failed(&mut self, seg: SegmentId, failed: bool) {
        if failed {
            self.failed.insert(seg);
        } else {
            self.failed.remove(&seg);
        }
    }

    pub fn is_failed(&self, seg: SegmentId) -> bool {
        self.failed.contains(&seg)
    }

    pub fn failed(&self) -> &BTreeSet<SegmentId> {
        &self.failed
    }

    /// Smoothed occupancy ratio for a segment.
    pub fn set_congestion(&mut self, seg: SegmentId, level: f64) {
        self.congestion.insert(seg, level);
    }

    pub fn congestion(&self, seg: SegmentId) -> f64 {
        self.congestion.get(&seg).copied().unwrap_or(0.0)
    }

    /// The same weights without failures or congestion.
    pub fn static_part(&self) -> CostModel {
        CostModel::new(self.w_len, self.w_time, self.w_cong)
    }
}

/// Cost of traversing `seg`; infinite when the segment has failed.
pub fn edge_cost(cm: &CostModel, g: &NetworkGraph, seg: SegmentId) -> f64 {
    if cm.is_failed(seg) {
        return f64::INFINITY;
    }
    let s = g.seg(seg);
    let base = cm.w_len * s.len() + cm.w_time * s.len() / s.v_limit;
    base * (1.0 + cm.w_cong * cm.congestion(seg))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RouteResult {
    pub route: Route,
    pub path: Vec<SegmentId>,
    pub cost: f64,
}

#[derive(PartialEq)]
struct Label {
    cost: f64,
    path: Vec<SegmentId>,
    node: NodeId,
}

impl Eq for Label {}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        other.cost.total_cmp(&self.cost).then_with(|| other.path.cmp(&self.path))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Best (cost, segment path) to every node reachable from `from`. Ties in
/// cost go to the lexicographically smallest segment-id sequence.
pub fn shortest_paths(
    g: &NetworkGraph,
    cm: &CostModel,
    from: NodeId,
) -> BTreeMap<NodeId, (f64, Vec<SegmentId>)> {
    let mut best: BTreeMap<NodeId, (f64, Vec<SegmentId>)> = BTreeMap::new();
    let mut done = BTreeSet::new();
    let mut heap = BinaryHeap::new();
    best.insert(from, (0.0, Vec::new()));
    heap.push(Label { cost: 0.0, path: Vec::new(), node: from });
    while let Some(Label { cost, path, node }) = heap.pop() {
        if !done.insert(node) {
            continue;
        }
        for &s in g.out_segments(node) {
            let c = edge_cost(cm, g, s);
            if !c.is_finite() {
                continue;
            }
            let to = g.seg(s).to;
            if done.contains(&to) {
                continue;
            }
            let new_cost = cost + c;
            let better = match best.get(&to) {
                None => true,
                Some((old, old_path)) => match new_cost.total_cmp(old) {
                    Ordering::Less => true,
                    Ordering::Equal => {
                        let mut cand = path.clone();
                        cand.push(s);
                        cand < *old_path
                    }
                    Ordering::Greater => false,
                },
            };
            if better {
                let mut p = path.clone();
                p.push(s);
                best.insert(to, (new_cost, p.clone()));
                heap.push(Label { cost: new_cost, path: p, node: to });
            }
        }
    }
    best
}

/// Cheapest route, or `None` when `to` is unreachable under `cm`.
pub fn shortest_route(g: &NetworkGraph, cm: &CostModel, from: NodeId, to: NodeId) -> Option<RouteResult> {
    let (cost, path) = shortest_paths(g, cm, from).remove(&to)?;
    Some(RouteResult { route: Route::from_path(g, from, &path), path, cost })
}

/// Network distance in meters from `from` to every reachable node.
pub fn distances_from(g: &NetworkGraph, failed: &BTreeSet<SegmentId>, from: NodeId) -> BTreeMap<NodeId, f64> {
    let mut cm = CostModel::length();
    for &s in failed {
        cm.set_failed(s, true);
    }
    shortest_paths(g, &cm, from).into_iter().map(|(n, (c, _))| (n, c)).collect()
}

/// Fresh decision at a fork: the cheapest continuation under current costs.
/// Keeps `planned` when it is still among the cheapest, so static costs give
/// a fixed point.
pub fn reroute_at_fork(
    g: &NetworkGraph,
    cm: &CostModel,
    fork: NodeId,
    destination: NodeId,
    planned: &[SegmentId],
) -> Option<Vec<SegmentId>> {
    let best = shortest_route(g, cm, fork, destination)?;
    let planned_cost: f64 = planned.iter().map(|&s| edge_cost(cm, g, s)).sum();
    if !planned.is_empty() && planned_cost.total_cmp(&best.cost) != Ordering::Greater {
        return Some(planned.to_vec());
    }
    Some(best.path)
}

/// What the router knows about one vehicle when a segment fails.
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleRouteState {
    pub vehicle: VehicleId,
    /// Segment the vehicle is on now.
    pub on_segment: SegmentId,
    /// Segments after the current one the vehicle is already committed to.
    pub committed: Vec<SegmentId>,
    /// First node where the route may still change.
    pub decision_node: NodeId,
    /// Planned continuation from `decision_node`.
    pub planned: Vec<SegmentId>,
    pub destination: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FailureAction {
    /// No continuation exists; the vehicle stops and waits at `at` (or on the
    /// failed segment itself when `at` is `None`).
    Stranded { at: Option<NodeId> },
    /// Destination lost; head for the closest reachable alternative.
    Retarget { destination: NodeId, path: Vec<SegmentId> },
    /// Destination still reachable along a new path.
    Reroute { path: Vec<SegmentId> },
    Unchanged,
}

/// Classify every vehicle after `failed_seg` became impassable (`cm` must
/// already mark it failed).
pub fn handle_link_failure(
    g: &NetworkGraph,
    cm: &CostModel,
    failed_seg: SegmentId,
    fleet: &[VehicleRouteState],
) -> Vec<(VehicleId, FailureAction)> {
    let intact = CostModel::length();
    fleet
        .iter()
        .map(|v| {
            let action = if v.on_segment == failed_seg {
                FailureAction::Stranded { at: None }
            } else if let Some(pos) = v.committed.iter().position(|&s| cm.is_failed(s)) {
                let at = g.seg(v.committed[pos]).from;
                FailureAction::Stranded { at: Some(at) }
            } else if !v.planned.iter().any(|&s| cm.is_failed(s)) {
                FailureAction::Unchanged
            } else if let Some(r) = shortest_route(g, cm, v.decision_node, v.destination) {
                FailureAction::Reroute { path: r.path }
            } else {
                retarget(g, cm, &intact, v)
            };
            (v.vehicle, action)
        })
        .collect()
}

fn retarget(g: &NetworkGraph, cm: &CostModel, intact: &CostModel, v: &VehicleRouteState) -> FailureAction {
    let reachable = shortest_paths(g, cm, v.decision_node);
    let want = g.kind(v.destination);
    let candidates = |kind: NodeKind| -> Option<(NodeId, Vec<SegmentId>)> {
        let mut best: Option<(f64, NodeId, &Vec<SegmentId>)> = None;
        for (&n, (_, path)) in &reachable {
            if g.kind(n) != Some(kind) || n == v.destination {
                continue;
            }
            // a route must leave the node it starts from
            if n == v.decision_node && path.is_empty() {
                continue;
            }
            let d = shortest_route(g, intact, n, v.destination).map_or(f64::INFINITY, |r| r.cost);
            let better = match best {
                None => true,
                Some((bd, bn, _)) => d < bd || (d == bd && n < bn),
            };
            if better {
                best = Some((d, n, path));
            }
        }
        best.map(|(_, n, p)| (n, p.clone()))
    };
    let order = match want {
        Some(NodeKind::Capacitor) => [NodeKind::Capacitor, NodeKind::Station],
        _ => [NodeKind::Station, NodeKind::Capacitor],
    };
    for kind in order {
        if let Some((destination, path)) = candidates(kind) {
            return FailureAction::Retarget { destination, path };
        }
    }
    let at = v
        .planned
        .iter()
        .find(|&&s| cm.is_failed(s))
        .map(|&s| g.seg(s).from)
        .unwrap_or(v.decision_node);
    FailureAction::Stranded { at: Some(at) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Node, Segment};
    use std::collections::BTreeMap as Map;

    fn graph(n: u32, edges: &[(u32, u32, u32, f64)]) -> NetworkGraph {
        let nodes = (0..n)
            .map(|i| Node { id: NodeId(i), kind: NodeKind::Join, position: [i as f64, 0.0] })
            .collect();
        let segs = edges
            .iter()
            .map(|&(id, a, b, len)| Segment {
                id: SegmentId(id),
                from: NodeId(a),
                to: NodeId(b),
                length: Some(len),
                v_limit: 10.0,
                sector_count: 1,
            })
            .collect();
        NetworkGraph::new(nodes, segs, Map::new(), Map::new())
    }

    #[test]
    fn edge_cost_components() {
        let g = graph(2, &[(0, 0, 1, 120.0)]);
        assert_eq!(edge_cost(&CostModel::length(), &g, SegmentId(0)), 120.0);
        let g2 = graph(2, &[(0, 0, 1, 100.0)]);
        assert_eq!(edge_cost(&CostModel::new(0.0, 1.0, 0.0), &g2, SegmentId(0)), 10.0);
        let mut cm = CostModel::length();
        cm.set_failed(SegmentId(0), true);
        assert!(edge_cost(&cm, &g, SegmentId(0)).is_infinite());
    }

    #[test]
    fn detour_beats_direct_when_cheaper() {
        // A=0, B=1, C=2
        let g = graph(3, &[(0, 0, 1, 5.0), (1, 0, 2, 2.0), (2, 2, 1, 2.0)]);
        let r = shortest_route(&g, &CostModel::length(), NodeId(0), NodeId(1)).unwrap();
        assert_eq!(r.path, vec![SegmentId(1), SegmentId(2)]);
        assert_eq!(r.cost, 4.0);
        let same = shortest_route(&g, &CostModel::length(), NodeId(0), NodeId(0)).unwrap();
        assert!(same.route.fork_choices.is_empty());
        assert_eq!(same.cost, 0.0);
    }

    #[test]
    fn tie_goes_to_smallest_segment_sequence() {
        let g = graph(4, &[(5, 0, 1, 1.0), (2, 0, 2, 1.0), (3, 1, 3, 1.0), (9, 2, 3, 1.0)]);
        let r = shortest_route(&g, &CostModel::length(), NodeId(0), NodeId(3)).unwrap();
        assert_eq!(r.path, vec![SegmentId(2), SegmentId(9)]);
    }

    #[test]
    fn failed_segment_never_used() {
        let g = graph(3, &[(0, 0, 1, 5.0), (1, 0, 2, 2.0), (2, 2, 1, 2.0)]);
        let mut cm = CostModel::length();
        cm.set_failed(SegmentId(1), true);
        let r = shortest_route(&g, &cm, NodeId(0), NodeId(1)).unwrap();
        assert_eq!(r.path, vec![SegmentId(0)]);
        cm.set_failed(SegmentId(0), true);
        assert!(shortest_route(&g, &cm, NodeId(0), NodeId(1)).is_none());
    }

    #[test]
    fn congestion_shifts_choice_and_restores() {
        let g = graph(3, &[(0, 0, 1, 5.0), (1, 0, 2, 2.0), (2, 2, 1, 2.0)]);
        let mut cm = CostModel::new(1.0, 0.0, 1.0);
        let planned = vec![SegmentId(1), SegmentId(2)];
        assert_eq!(reroute_at_fork(&g, &cm, NodeId(0), NodeId(1), &planned).unwrap(), planned);
        cm.set_congestion(SegmentId(1), 9.0);
        assert_eq!(
            reroute_at_fork(&g, &cm, NodeId(0), NodeId(1), &planned).unwrap(),
            vec![SegmentId(0)]
        );
        cm.set_congestion(SegmentId(1), 0.0);
        assert_eq!(
            reroute_at_fork(&g, &cm, NodeId(0), NodeId(1), &[SegmentId(0)]).unwrap(),
            planned
        );
    }
}
