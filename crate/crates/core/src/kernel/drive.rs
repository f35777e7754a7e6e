//! Track motion: sector decisions under the headway rule, merge grants and
//! the separation check.

use crate::error::{Error, Result};
use crate::kernel::event::{Detail, EventKind};
use crate::kernel::sim::{Action, Block, Motion, Place, Sim};
use crate::motion::{free_run_time, plan_sector_transit, resolve_merge, KeepingRule, MergeContender, SectorInput};
use crate::network::{NodeId, NodeKind, SegmentId};
use crate::routing::reroute_at_fork;
use crate::VehicleId;

const EPS: f64 = 1e-6;

/// First vehicle ahead along a path.
#[derive(Clone, Copy, Debug)]
pub(super) struct Leader {
    pub id: VehicleId,
    /// Distance from the querying position to the leader.
    pub gap: f64,
    pub v: f64,
    /// Index into the path of the leader's segment.
    pub index: usize,
}

impl<'m> Sim<'m> {
    fn breach(&self, message: String) -> Error {
        Error::InvariantBreach { t_us: self.now, seq: 0, kind: String::new(), message }
    }

    /// Position on `path[0]` and speed of an on-track vehicle.
    pub fn position(&self, v: VehicleId) -> (f64, f64) {
        let veh = &self.vehicles[v.0 as usize];
        let t = veh.track().expect("vehicle on track");
        let sl = self.g.seg(veh.path[0]).sector_len();
        let base = t.boundary as f64 * sl;
        match &t.motion {
            Some(m) => {
                let (dx, sp) = m.plan.state_at((self.now - m.t0) as f64 / 1e6);
                (base + dx, sp)
            }
            None => (base, t.v),
        }
    }

    /// Closest vehicle ahead of offset `x0` on `path[0]`, searching at most
    /// `limit` metres.
    pub fn leader_on(&self, me: Option<VehicleId>, path: &[SegmentId], x0: f64, limit: f64) -> Option<Leader> {
        self.scan_leaders(me, path, x0, limit, true).into_iter().next()
    }

    /// First vehicle ahead on every segment of `path` within `limit`. A
    /// nearer vehicle may leave the path at a fork, exposing the next one.
    pub fn leaders_on(&self, me: Option<VehicleId>, path: &[SegmentId], x0: f64, limit: f64) -> Vec<Leader> {
        self.scan_leaders(me, path, x0, limit, false)
    }

    fn scan_leaders(&self, me: Option<VehicleId>, path: &[SegmentId], x0: f64, limit: f64, first_only: bool) -> Vec<Leader> {
        let mut out = Vec::new();
        let mut off = -x0;
        for (j, &s) in path.iter().enumerate() {
            if j > 0 && off > limit {
                break;
            }
            let mut best: Option<(f64, VehicleId, f64)> = None;
            for &u in self.on_seg.get(&s).map(|v| v.as_slice()).unwrap_or(&[]) {
                if Some(u) == me {
                    continue;
                }
                let (x, sp) = self.position(u);
                if j == 0 && x < x0 - 1e-9 {
                    continue;
                }
                if best.map_or(true, |(bx, bu, _)| x < bx || (x == bx && u < bu)) {
                    best = Some((x, u, sp));
                }
            }
            if let Some((x, u, sp)) = best {
                out.push(Leader { id: u, gap: off + x, v: sp, index: j });
                if first_only {
                    break;
                }
            }
            let seg = self.g.seg(s);
            // station entry and exit are distinct points
            if matches!(self.g.kind(seg.to), Some(NodeKind::Station | NodeKind::Capacitor)) {
                break;
            }
            off += seg.len();
        }
        out
    }

    /// Largest sector boundary along `path` not beyond `tau` (measured from
    /// `x0` on `path[0]`).
    fn floor_to_boundary(&self, path: &[SegmentId], x0: f64, tau: f64) -> f64 {
        if tau < 0.0 {
            return tau;
        }
        let mut off = -x0;
        for (j, &s) in path.iter().enumerate() {
            let seg = self.g.seg(s);
            let len = seg.len();
            if tau < off + len || j + 1 == path.len() {
                let sl = seg.sector_len();
                let k = ((tau - off) / sl + 1e-9).floor().min(seg.sector_count as f64);
                return off + k * sl;
            }
            off += len;
        }
        tau
    }

    /// Stop target behind a leader under the active headway rule.
    fn leader_target(&self, l: &Leader) -> f64 {
        let s = self.spec.s_static;
        match self.m.motion.rule {
            KeepingRule::Optimal => l.gap + l.v * l.v / (2.0 * self.spec.b_max) - s,
            KeepingRule::Careful => l.gap - s,
        }
    }

    /// Re-decide forks that entered the lookahead when routing is dynamic.
    fn decide_forks(&mut self, vid: VehicleId) {
        if !self.m.routing.dynamic {
            return;
        }
        let i = vid.0 as usize;
        let Some(dest) = self.vehicles[i].dest else { return };
        if self.vehicles[i].stranded {
            return;
        }
        let (x0, _) = self.position(vid);
        let mut off = -x0;
        let mut j = 0;
        while j + 1 < self.vehicles[i].path.len() {
            let s = self.vehicles[i].path[j];
            off += self.g.seg(s).len();
            if off > self.lookahead {
                break;
            }
            let node = self.g.seg(s).to;
            if j + 1 > self.vehicles[i].decided && self.g.kind(node) == Some(NodeKind::Fork) {
                let planned = self.vehicles[i].path[j + 1..].to_vec();
                self.refresh_congestion();
                if let Some(new) = reroute_at_fork(self.g, &self.cost, node, dest, &planned) {
                    if new != planned && self.can_follow(vid, &new, off) {
                        let veh = &mut self.vehicles[i];
                        veh.path.truncate(j + 1);
                        veh.path.extend(new);
                        self.emit(EventKind::Reroute, |e| e.vehicle(vid).node(node));
                        self.drop_stale_merges(vid);
                    }
                }
                self.vehicles[i].decided = j + 1;
            }
            j += 1;
        }
    }

    /// Whether `vid` could still respect every leader on `branch`, which
    /// starts `ahead` metres in front of it.
    fn can_follow(&self, vid: VehicleId, branch: &[SegmentId], ahead: f64) -> bool {
        let (_, v) = self.position(vid);
        let own = v * v / (2.0 * self.spec.b_max);
        self.leaders_on(Some(vid), branch, 0.0, self.lookahead)
            .into_iter()
            .all(|l| own <= self.leader_target(&Leader { gap: l.gap + ahead, ..l }) + EPS)
    }

    /// Decide the next sector for a vehicle standing or passing at a
    /// boundary strictly inside `path[0]`.
    pub fn plan_next(&mut self, vid: VehicleId) -> Result<()> {
        self.decide_forks(vid);
        let i = vid.0 as usize;
        let path = self.vehicles[i].path.clone();
        let t = self.vehicles[i].track().expect("on track").clone();
        let seg0 = self.g.seg(path[0]);
        debug_assert!(t.boundary < seg0.sector_count);
        let sl = seg0.sector_len();
        let x0 = t.boundary as f64 * sl;
        let s = self.spec.s_static;
        let b = self.spec.b_max;
        let stranded = self.vehicles[i].stranded;

        // (distance of bound from x0, speed allowed there, what it waits on)
        let mut cons: Vec<(f64, f64, Option<Block>)> = Vec::new();
        let leader = self.leader_on(Some(vid), &path, x0, self.lookahead);
        let mut off = -x0;
        for j in 0..path.len() {
            let seg = self.g.seg(path[j]);
            let end = off + seg.len();
            let node = seg.to;
            let kind = self.g.kind(node).expect("node");
            if j + 1 == path.len() {
                let target = if kind == NodeKind::Join { end - s } else { end };
                let cause = if stranded { Block::Network } else { Block::Node(node) };
                cons.push((self.floor_to_boundary(&path, x0, target), 0.0, Some(cause)));
                break;
            }
            if matches!(kind, NodeKind::Station | NodeKind::Capacitor) {
                cons.push((end, 0.0, Some(Block::Node(node))));
                break;
            }
            if kind == NodeKind::Join {
                let blocker = leader.map_or(false, |l| l.index <= j && self.passes(l.id, path[j]));
                if !self.merge_pass(vid, node, blocker) {
                    cons.push((self.floor_to_boundary(&path, x0, end - s), 0.0, Some(Block::Node(node))));
                    break;
                }
            }
            if end > self.lookahead {
                break;
            }
            let next = self.g.seg(path[j + 1]);
            cons.push((end, next.v_limit.min(self.spec.v_max), None));
            off = end;
        }
        for l in self.leaders_on(Some(vid), &path, x0, self.lookahead) {
            let tau = self.leader_target(&l);
            cons.push((self.floor_to_boundary(&path, x0, tau), 0.0, Some(Block::Vehicle(l.id))));
        }

        let mut limit = f64::INFINITY;
        let mut hold: Option<(f64, Option<Block>)> = None;
        for &(d, w, cause) in &cons {
            if d < sl - EPS {
                if hold.map_or(true, |(hd, _)| d < hd) {
                    hold = Some((d, cause));
                }
            } else {
                limit = limit.min((w * w + 2.0 * b * (d - sl).max(0.0)).sqrt());
            }
        }
        if let Some((_, cause)) = hold {
            if t.v <= EPS {
                let veh = &mut self.vehicles[i];
                veh.track_mut().expect("on track").v = 0.0;
                self.block(vid, cause.unwrap_or(Block::Network));
                return Ok(());
            }
            limit = 0.0;
        }
        let out = plan_sector_transit(&SectorInput {
            v0: t.v,
            length: sl,
            v_cap: seg0.v_limit.min(self.spec.v_max),
            exit_limit: limit,
            a: self.spec.a_max,
            b,
            b_emerg: self.spec.b_emerg,
        });
        if out.emergency {
            let seg = path[0];
            self.emit(EventKind::EmergencyBrake, |e| e.vehicle(vid).segment(seg));
        }
        let at = self.now + out.plan.duration_us().max(1);
        self.vehicles[i].track_mut().expect("on track").motion = Some(Motion { plan: out.plan, t0: self.now });
        self.schedule(at, Action::Boundary { vehicle: vid })
    }

    /// Whether vehicle `u`'s remaining path uses segment `s`.
    fn passes(&self, u: VehicleId, s: SegmentId) -> bool {
        self.vehicles[u.0 as usize].path.contains(&s)
    }

    /// Register interest in a join and report whether `vid` may pass it.
    fn merge_pass(&mut self, vid: VehicleId, node: NodeId, blocker: bool) -> bool {
        let m = self.merges.entry(node).or_default();
        m.requests.insert(vid);
        if m.holder == Some(vid) {
            if blocker {
                // someone slipped in ahead; let the arbitration run again
                self.release_merge(node, Some(vid));
                return self.merges[&node].holder == Some(vid);
            }
            return true;
        }
        if m.holder.is_none() && !blocker {
            m.holder = Some(vid);
            self.emit(EventKind::MergeArbitration, |e| {
                e.vehicle(vid).node(node).detail(Detail { granted: Some(vid), ..Detail::default() })
            });
            return true;
        }
        false
    }

    /// Hand the grant at `node` to the next eligible requester.
    pub fn release_merge(&mut self, node: NodeId, skip: Option<VehicleId>) {
        let requests: Vec<VehicleId> = match self.merges.get_mut(&node) {
            Some(m) => {
                m.holder = None;
                m.requests.iter().copied().collect()
            }
            None => return,
        };
        let mut contenders = Vec::new();
        for u in requests {
            if Some(u) == skip {
                continue;
            }
            if let Some(c) = self.merge_contender(u, node) {
                contenders.push(c);
            }
        }
        let order = resolve_merge(&contenders, self.m.motion.merge_rule);
        if let Some(&first) = order.first() {
            self.merges.get_mut(&node).expect("merge").holder = Some(first);
            self.emit(EventKind::MergeArbitration, |e| {
                e.vehicle(first).node(node).detail(Detail { granted: Some(first), ..Detail::default() })
            });
        }
        self.notify_node(node);
    }

    /// Requester `u` as a contender at `node`, if it is the first vehicle
    /// that will reach the node on its branch.
    fn merge_contender(&self, u: VehicleId, node: NodeId) -> Option<MergeContender> {
        let veh = &self.vehicles[u.0 as usize];
        veh.track()?;
        let j = veh.path.iter().position(|&s| self.g.seg(s).to == node)?;
        let (x, sp) = self.position(u);
        if let Some(l) = self.leader_on(Some(u), &veh.path[..=j], x, f64::INFINITY) {
            if self.passes(l.id, veh.path[j]) {
                return None;
            }
        }
        let dist: f64 = veh.path[..=j].iter().map(|&s| self.g.seg(s).len()).sum::<f64>() - x;
        let cap = self.g.seg(veh.path[0]).v_limit.min(self.spec.v_max);
        Some(MergeContender {
            vehicle: u,
            branch: veh.path[j],
            projected_arrival: free_run_time(dist, sp, cap, self.spec.a_max),
        })
    }

    /// Forget grants and requests for joins no longer on the path.
    pub fn drop_stale_merges(&mut self, vid: VehicleId) {
        let on_track = self.vehicles[vid.0 as usize].track().is_some();
        let nodes: Vec<NodeId> = self
            .merges
            .iter()
            .filter(|(_, m)| m.holder == Some(vid) || m.requests.contains(&vid))
            .map(|(&n, _)| n)
            .collect();
        for n in nodes {
            let path = &self.vehicles[vid.0 as usize].path;
            let still = on_track && path[..path.len().saturating_sub(1)].iter().any(|&s| self.g.seg(s).to == n);
            if still {
                continue;
            }
            let m = self.merges.get_mut(&n).expect("merge");
            m.requests.remove(&vid);
            if m.holder == Some(vid) {
                self.release_merge(n, None);
            }
        }
    }

    /// A sector transit finished.
    pub fn on_boundary(&mut self, vid: VehicleId) -> Result<()> {
        let i = vid.0 as usize;
        let seg = self.vehicles[i].path[0];
        let s = self.g.seg(seg);
        let (sector, v) = {
            let t = self.vehicles[i].track_mut().expect("on track");
            let m = t.motion.take().expect("moving");
            t.boundary += 1;
            t.v = m.plan.v_exit;
            (t.boundary, t.v)
        };
        let dist_um = (s.sector_len() * 1e6).round() as u64;
        let veh = &mut self.vehicles[i];
        veh.odo_um += dist_um;
        let loaded = veh.load.is_some();
        if loaded {
            if let Some(trip) = &mut veh.trip {
                trip.route_len_um += dist_um;
            }
        }
        self.emit(EventKind::SectorBoundary, |e| {
            e.vehicle(vid).segment(seg).detail(Detail {
                dist_um: Some(dist_um),
                loaded: Some(loaded),
                sector: Some(sector),
                speed_umps: Some((v * 1e6).round() as u64),
                ..Detail::default()
            })
        });
        self.notify_vehicle(vid);
        if sector == s.sector_count {
            let node = s.to;
            self.emit(EventKind::ArrivalAtNode, |e| e.vehicle(vid).node(node).segment(seg));
            self.at_node(vid)
        } else {
            self.plan_next(vid)
        }
    }

    /// Vehicle stands or passes at the end of `path[0]`.
    pub fn at_node(&mut self, vid: VehicleId) -> Result<()> {
        let i = vid.0 as usize;
        let seg = self.vehicles[i].path[0];
        let node = self.g.seg(seg).to;
        let v = self.vehicles[i].track().expect("on track").v;
        let kind = self.g.kind(node).expect("node");
        if self.vehicles[i].path.len() == 1 {
            if v > EPS {
                return Err(self.breach(format!("{vid} overran the end of its path at {node}")));
            }
            if self.vehicles[i].stranded {
                self.block(vid, Block::Network);
                return Ok(());
            }
            return self.arrive_at_path_end(vid, node);
        }
        if matches!(kind, NodeKind::Station | NodeKind::Capacitor) {
            if v > EPS {
                return Err(self.breach(format!("{vid} ran through station {node} without stopping")));
            }
            let t = self.vehicles[i].track_mut().expect("on track");
            if !t.pass_through {
                t.pass_through = true;
                self.depots.get_mut(&node).expect("depot").launch.push_back(vid);
            }
            self.dirty.insert(node);
            return Ok(());
        }
        if kind == NodeKind::Join {
            let m = self.merges.entry(node).or_default();
            if m.holder != Some(vid) {
                return Err(self.breach(format!("{vid} entered join {node} without a grant")));
            }
            m.requests.remove(&vid);
            self.release_merge(node, Some(vid));
        }
        self.transfer(vid);
        self.plan_next(vid)
    }

    /// Move a vehicle standing at the end of `path[0]` onto `path[1]`.
    pub fn transfer(&mut self, vid: VehicleId) {
        let i = vid.0 as usize;
        let old = self.vehicles[i].path[0];
        self.leave_segment(vid, old);
        let veh = &mut self.vehicles[i];
        veh.path.remove(0);
        veh.decided = veh.decided.saturating_sub(1);
        let new = veh.path[0];
        let t = veh.track_mut().expect("on track");
        t.boundary = 0;
        t.pass_through = false;
        if veh.load.is_some() {
            if let Some(trip) = &mut veh.trip {
                trip.segments.push(new);
            }
        }
        self.enter_segment(vid, new);
    }

    /// Re-evaluate a vehicle after whatever it waited on changed.
    pub fn resume(&mut self, vid: VehicleId) -> Result<()> {
        let i = vid.0 as usize;
        let veh = &self.vehicles[i];
        match &veh.place {
            Place::Track(t) => {
                if t.motion.is_some() {
                    return Ok(());
                }
                let seg = self.g.seg(veh.path[0]);
                if t.boundary < seg.sector_count {
                    return self.plan_next(vid);
                }
                let node = seg.to;
                if t.pass_through {
                    self.dirty.insert(node);
                    return Ok(());
                }
                if veh.path.len() == 1 && !veh.stranded {
                    return self.try_admit(vid, node);
                }
                self.at_node(vid)
            }
            _ => {
                if let Some(n) = veh.station_node() {
                    self.dirty.insert(n);
                }
                Ok(())
            }
        }
    }

    /// Every on-track vehicle against its leader under the active rule.
    pub fn check_separation(&self) -> std::result::Result<(), String> {
        let b = self.spec.b_max;
        for veh in &self.vehicles {
            if veh.track().is_none() {
                continue;
            }
            let (x, sp) = self.position(veh.id);
            for l in self.leaders_on(Some(veh.id), &veh.path, x, 2.0 * self.lookahead) {
                if l.gap < -EPS {
                    return Err(format!("{} overtook {}", veh.id, l.id));
                }
                let own = sp * sp / (2.0 * b);
                let bound = self.leader_target(&l);
                if own > bound + EPS {
                    return Err(format!(
                        "{} too close to {}: gap {:.6} m, speeds {:.4}/{:.4} m/s",
                        veh.id, l.id, l.gap, sp, l.v
                    ));
                }
            }
        }
        Ok(())
    }
}
