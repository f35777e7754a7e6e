//! Station and capacitor internals: admission, berths, buffers, boarding and
//! launches onto the guideway.

use crate::error::Result;
use crate::fleet::{evict_for_arrival, BerthOccupant};
use crate::kernel::event::{secs_to_us_ceil, Detail, EventKind, Timestamp};
use crate::kernel::sim::{Action, Block, Place, Sim, TripLog, Track};
use crate::metrics::min_trip_time;
use crate::motion::{min_travel_time, KeepingRule};
use crate::network::{NodeId, SegmentId};
use crate::stations::Admission;
use crate::VehicleId;

impl<'m> Sim<'m> {
    fn spur_time(&self, node: NodeId) -> Timestamp {
        let len = self.depots[&node].st.spur_len_m;
        let t = min_travel_time(&[(len, self.spec.v_max)], self.spec.v_max, self.spec.a_max, self.spec.b_max);
        secs_to_us_ceil(t).max(1)
    }

    /// Vehicle stopped at the end of its path, which is a station or
    /// capacitor node.
    pub fn arrive_at_path_end(&mut self, vid: VehicleId, node: NodeId) -> Result<()> {
        let i = vid.0 as usize;
        if let Some(g) = self.vehicles[i].load {
            let trip = self.vehicles[i].trip.clone().expect("loaded vehicles carry a trip log");
            let group = self.groups.get_mut(&g).expect("group");
            group.t_arrive = Some(self.now);
            group.outcome = crate::demand::GroupOutcome::Served;
            let group = group.clone();
            let min_time = min_trip_time(self.g, &trip.segments, &self.spec);
            let detail = Detail {
                size: Some(group.size),
                origin: Some(group.origin),
                destination: Some(node),
                t_appear_us: Some(group.t_appear),
                t_board_us: group.t_board_start,
                t_depart_us: Some(trip.t_depart),
                min_time_us: Some(crate::kernel::event::secs_to_us(min_time)),
                route_len_um: Some(trip.route_len_um),
                ..Detail::default()
            };
            self.emit(EventKind::TripEnd, |e| e.vehicle(vid).group(g).node(node).detail(detail));
        }
        self.try_admit(vid, node)
    }

    /// Take an arrival standing at the entry into the station, or keep it
    /// waiting there.
    pub fn try_admit(&mut self, vid: VehicleId, node: NodeId) -> Result<()> {
        let i = vid.0 as usize;
        let can_admit = self.depots[&node].st.can_admit();
        if !can_admit {
            let veh = &self.vehicles[i];
            let needed = veh.load.is_some() || veh.claim.is_some();
            if !needed {
                if let Some(c) = self.nearest_capacitor_with_space(node) {
                    if let Some(route) = self.route(node, c) {
                        let veh = &mut self.vehicles[i];
                        veh.path.extend(route);
                        veh.decided = 0;
                        veh.dest = Some(c);
                        veh.track_mut().expect("on track").pass_through = true;
                        self.depots.get_mut(&node).expect("depot").launch.push_back(vid);
                        self.emit(EventKind::EmptyTripStart, |e| {
                            e.vehicle(vid).node(node).detail(Detail { destination: Some(c), ..Detail::default() })
                        });
                        self.dirty.insert(node);
                        return Ok(());
                    }
                }
            } else {
                self.evict_idle(node);
            }
            self.depots.get_mut(&node).expect("depot").held = Some(vid);
            self.block(vid, Block::Node(node));
            return Ok(());
        }
        let depot = self.depots.get_mut(&node).expect("depot");
        if depot.held == Some(vid) {
            depot.held = None;
        }
        let admission = depot.st.admit_vehicle(vid);
        let seg = self.vehicles[i].path[0];
        self.leave_segment(vid, seg);
        self.vehicles[i].path.clear();
        match admission {
            Admission::Berth(berth) => {
                self.vehicles[i].place = Place::Spur { node, berth };
                let at = self.now + self.spur_time(node);
                self.schedule(at, Action::BerthEnter { vehicle: vid })?;
            }
            Admission::InBuffer => {
                self.vehicles[i].place = Place::InBuffer { node };
                self.emit(EventKind::BufferEnter, |e| {
                    e.vehicle(vid).node(node).detail(Detail { in_buffer: Some(true), ..Detail::default() })
                });
            }
            Admission::Hold => unreachable!("checked can_admit"),
        }
        self.notify_vehicle(vid);
        self.drop_stale_merges(vid);
        self.dirty.insert(node);
        Ok(())
    }

    /// Send the longest-idle vehicle at `node` off to a capacitor to make
    /// room.
    fn evict_idle(&mut self, node: NodeId) {
        let st = &self.depots[&node].st;
        let occupants: Vec<BerthOccupant> = (0..st.berth_count())
            .filter_map(|b| st.berth(b))
            .map(|v| BerthOccupant { vehicle: v, idle_since: self.vehicles[v.0 as usize].idle_since })
            .collect();
        let Some(e) = evict_for_arrival(st.berths_full(), &occupants) else { return };
        if let Some(c) = self.nearest_capacitor_with_space(node) {
            self.send_empty(e, node, c);
        }
    }

    pub fn on_berth_enter(&mut self, vid: VehicleId) -> Result<()> {
        let i = vid.0 as usize;
        let Place::Spur { node, berth } = self.vehicles[i].place else { unreachable!("berth entry from the spur") };
        self.vehicles[i].place = Place::Berth { node, berth };
        let berth_detail = Detail { berth: Some(berth as u32), ..Detail::default() };
        self.dirty.insert(node);
        if let Some(g) = self.vehicles[i].load {
            self.emit(EventKind::BerthEnter, |e| e.vehicle(vid).node(node).detail(berth_detail));
            self.emit(EventKind::AlightStart, |e| e.vehicle(vid).group(g).node(node));
            self.vehicles[i].busy = true;
            let at = self.now + self.sample_service(true);
            return self.schedule(at, Action::AlightEnd { vehicle: vid });
        }
        if self.vehicles[i].claim == Some(node) && !self.depots[&node].st.queue.is_empty() {
            self.emit(EventKind::BerthEnter, |e| e.vehicle(vid).node(node).detail(berth_detail));
            return self.try_board(vid);
        }
        let veh = &mut self.vehicles[i];
        veh.claim = None;
        veh.dest = None;
        veh.idle_since = Some(self.now);
        self.emit(EventKind::BerthEnter, |e| {
            e.vehicle(vid).node(node).detail(Detail { idle_delta: Some(1), ..berth_detail })
        });
        self.on_idle(vid)
    }

    /// Board the head of the queue at the vehicle's berth.
    pub fn try_board(&mut self, vid: VehicleId) -> Result<()> {
        let i = vid.0 as usize;
        let Place::Berth { node, .. } = self.vehicles[i].place else { unreachable!("boarding at a berth") };
        let Some(g) = self.depots.get_mut(&node).expect("depot").st.queue.pop_front() else {
            return Ok(());
        };
        self.emit(EventKind::QueueLeave, |e| e.group(g).node(node));
        let group = self.groups.get_mut(&g).expect("group");
        group.t_board_start = Some(self.now);
        let t_appear = group.t_appear;
        self.emit(EventKind::BoardStart, |e| {
            e.vehicle(vid).group(g).node(node).detail(Detail { t_appear_us: Some(t_appear), ..Detail::default() })
        });
        let veh = &mut self.vehicles[i];
        veh.claim = None;
        veh.load = Some(g);
        veh.busy = true;
        self.balance_calls(node);
        let at = self.now + self.sample_service(false);
        self.schedule(at, Action::BoardEnd { vehicle: vid })
    }

    pub fn on_board_end(&mut self, vid: VehicleId) {
        let i = vid.0 as usize;
        let node = self.vehicles[i].station_node().expect("in a station");
        let g = self.vehicles[i].load.expect("boarded group");
        self.vehicles[i].busy = false;
        self.emit(EventKind::BoardEnd, |e| e.vehicle(vid).group(g).node(node));
        let dest = self.groups[&g].destination;
        self.begin_departure(vid, dest);
    }

    pub fn on_alight_end(&mut self, vid: VehicleId) -> Result<()> {
        let i = vid.0 as usize;
        let node = self.vehicles[i].station_node().expect("in a station");
        let veh = &mut self.vehicles[i];
        let g = veh.load.take().expect("alighting group");
        veh.trip = None;
        veh.busy = false;
        veh.dest = None;
        veh.idle_since = Some(self.now);
        self.emit(EventKind::AlightEnd, |e| {
            e.vehicle(vid).group(g).node(node).detail(Detail { idle_delta: Some(1), ..Detail::default() })
        });
        self.dirty.insert(node);
        self.on_idle(vid)
    }

    /// Mark a parked vehicle as ready to leave for `target`.
    pub fn begin_departure(&mut self, vid: VehicleId, target: NodeId) {
        let veh = &mut self.vehicles[vid.0 as usize];
        veh.dest = Some(target);
        veh.ready_to_leave = true;
        if let Some(n) = veh.station_node() {
            self.dirty.insert(n);
        }
    }

    pub fn on_out_buffer_enter(&mut self, vid: VehicleId) {
        let i = vid.0 as usize;
        let Place::ToOutBuffer { node } = self.vehicles[i].place else { unreachable!("moving to the out-buffer") };
        self.vehicles[i].place = Place::OutBuffer { node };
        self.emit(EventKind::BufferEnter, |e| {
            e.vehicle(vid).node(node).detail(Detail { in_buffer: Some(false), ..Detail::default() })
        });
        self.depots.get_mut(&node).expect("depot").launch.push_back(vid);
        self.dirty.insert(node);
    }

    /// Advance everything waiting inside or at the entry of a station.
    pub fn station_changed(&mut self, node: NodeId) -> Result<()> {
        loop {
            let mut progress = false;

            let promoted = self.depots.get_mut(&node).expect("depot").st.promote_from_in_buffer();
            if let Some((u, berth)) = promoted {
                self.emit(EventKind::BufferLeave, |e| {
                    e.vehicle(u).node(node).detail(Detail { in_buffer: Some(true), ..Detail::default() })
                });
                self.vehicles[u.0 as usize].place = Place::Spur { node, berth };
                let at = self.now + self.spur_time(node);
                self.schedule(at, Action::BerthEnter { vehicle: u })?;
                progress = true;
            }

            progress |= self.berths_to_exit(node)?;

            if let Some(h) = self.depots[&node].held {
                if self.depots[&node].st.can_admit() {
                    self.vehicles[h.0 as usize].blocked = None;
                    self.try_admit(h, node)?;
                    progress = self.depots[&node].held != Some(h) || progress;
                }
            }

            progress |= self.try_launch(node)?;
            if !progress {
                break;
            }
        }
        self.notify_node(node);
        Ok(())
    }

    /// Move ready vehicles from berths toward the exit.
    fn berths_to_exit(&mut self, node: NodeId) -> Result<bool> {
        let mut progress = false;
        let n = self.depots[&node].st.berth_count();
        for b in 0..n {
            let Some(u) = self.depots[&node].st.berth(b) else { continue };
            let veh = &self.vehicles[u.0 as usize];
            if !veh.ready_to_leave || veh.busy || !matches!(veh.place, Place::Berth { .. }) {
                continue;
            }
            let st = &self.depots[&node].st;
            if st.has_out_buffer() {
                if st.out_buffer_has_room() && st.can_leave_berth(b) {
                    let depot = self.depots.get_mut(&node).expect("depot");
                    depot.st.free_berth_of(u);
                    depot.st.enter_out_buffer(u);
                    self.emit(EventKind::BerthLeave, |e| {
                        e.vehicle(u).node(node).detail(Detail { berth: Some(b as u32), ..Detail::default() })
                    });
                    self.vehicles[u.0 as usize].place = Place::ToOutBuffer { node };
                    let at = self.now + self.spur_time(node);
                    self.schedule(at, Action::OutBufferEnter { vehicle: u })?;
                    progress = true;
                }
            } else if !self.depots[&node].launch.contains(&u) {
                self.depots.get_mut(&node).expect("depot").launch.push_back(u);
                progress = true;
            }
        }
        Ok(progress)
    }

    /// Launch the first eligible vehicle in the station's exit order.
    fn try_launch(&mut self, node: NodeId) -> Result<bool> {
        let queue: Vec<VehicleId> = self.depots[&node].launch.iter().copied().collect();
        for u in queue {
            let i = u.0 as usize;
            let st = &self.depots[&node].st;
            let eligible = match &self.vehicles[i].place {
                Place::Berth { berth, .. } => st.can_leave_berth(*berth),
                Place::OutBuffer { .. } => st.out_buffer().front() == Some(&u),
                Place::Track(_) => {
                    let clear = st.through_line_clear();
                    if !clear {
                        self.evict_idle(node);
                    }
                    clear
                }
                _ => false,
            };
            if !eligible {
                continue;
            }
            let path: Vec<SegmentId> = match &self.vehicles[i].place {
                Place::Track(_) => self.vehicles[i].path[1..].to_vec(),
                _ => {
                    let dest = self.vehicles[i].dest.expect("departing vehicles have a destination");
                    match self.route(node, dest) {
                        Some(p) => p,
                        None => {
                            self.block(u, Block::Network);
                            continue;
                        }
                    }
                }
            };
            for l in self.leaders_on(Some(u), &path, 0.0, self.lookahead) {
                let s = self.spec.s_static;
                let ok = match self.m.motion.rule {
                    KeepingRule::Optimal => l.gap + l.v * l.v / (2.0 * self.spec.b_max) - s >= -1e-9,
                    KeepingRule::Careful => l.gap - s >= -1e-9,
                };
                if !ok {
                    self.block(u, Block::Vehicle(l.id));
                    return Ok(false);
                }
            }
            self.launch(u, node, path)?;
            return Ok(true);
        }
        Ok(false)
    }

    fn launch(&mut self, u: VehicleId, node: NodeId, path: Vec<SegmentId>) -> Result<()> {
        let i = u.0 as usize;
        let depot = self.depots.get_mut(&node).expect("depot");
        depot.launch.retain(|&x| x != u);
        match self.vehicles[i].place.clone() {
            Place::Berth { berth, .. } => {
                depot.st.free_berth_of(u);
                self.emit(EventKind::BerthLeave, |e| {
                    e.vehicle(u).node(node).detail(Detail { berth: Some(berth as u32), ..Detail::default() })
                });
            }
            Place::OutBuffer { .. } => {
                depot.st.leave_out_buffer(u);
                self.emit(EventKind::BufferLeave, |e| {
                    e.vehicle(u).node(node).detail(Detail { in_buffer: Some(false), ..Detail::default() })
                });
            }
            Place::Track(_) => {
                let seg = self.vehicles[i].path[0];
                self.leave_segment(u, seg);
            }
            other => unreachable!("launch from {other:?}"),
        }
        let out = path[0];
        let veh = &mut self.vehicles[i];
        veh.place = Place::Track(Track { boundary: 0, v: 0.0, motion: None, pass_through: false });
        veh.path = path;
        veh.decided = 0;
        veh.ready_to_leave = false;
        veh.blocked = None;
        let start = match (veh.load, &mut veh.trip) {
            (Some(_), Some(trip)) => {
                trip.segments.push(out);
                None
            }
            (Some(g), None) => {
                veh.trip = Some(TripLog { t_depart: self.now, route_len_um: 0, segments: vec![out] });
                Some(g)
            }
            _ => None,
        };
        self.enter_segment(u, out);
        if let Some(g) = start {
            let group = self.groups.get_mut(&g).expect("group");
            group.t_depart = Some(self.now);
            let detail = Detail {
                size: Some(group.size),
                origin: Some(node),
                destination: Some(group.destination),
                ..Detail::default()
            };
            self.emit(EventKind::TripStart, |e| e.vehicle(u).group(g).node(node).detail(detail));
        }
        self.notify_vehicle(u);
        self.dirty.insert(node);
        self.plan_next(u)
    }
}
