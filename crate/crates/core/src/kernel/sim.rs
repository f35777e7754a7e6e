//! One replication: state, the event loop, demand generation, dispatching
//! and link failures. Track motion lives in `drive`, station internals in
//! `depot`.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::demand::{sample_destination, sample_group_size, sample_interarrival, sample_triangular, GroupId, GroupOutcome, PassengerGroup};
use crate::error::{Error, Result};
use crate::fleet::{allocate_vehicle, on_vehicle_released, Call, IdleVehicle, ReleaseAction, StationView};
use crate::kernel::event::{secs_to_us, Detail, EventBuffer, EventKind, Timestamp, TraceEvent};
use crate::metrics::{Accumulator, Metrics, MetricsConfig, TripRecord};
use crate::motion::{SectorPlan, VehicleSpec};
use crate::network::{NetworkGraph, NodeId, NodeKind, SegmentId};
use crate::routing::{distances_from, handle_link_failure, shortest_route, CostModel, FailureAction, VehicleRouteState};
use crate::scenario::{Model, Placement, RunSection};
use crate::stations::StationState;
use crate::VehicleId;

/// Per-replication run settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationConfig {
    pub horizon_s: f64,
    pub warmup_s: f64,
    pub seed: u64,
    pub trace: bool,
}

impl ReplicationConfig {
    pub fn from_run(run: &RunSection) -> Self {
        ReplicationConfig { horizon_s: run.horizon_s, warmup_s: run.warmup_s, seed: run.seed, trace: run.trace }
    }
}

/// Everything a replication produces.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub trips: Vec<TripRecord>,
    pub trace: Option<Vec<TraceEvent>>,
    /// Events popped from the buffer.
    pub events: u64,
}

pub fn metrics_config(model: &Model, cfg: &ReplicationConfig) -> MetricsConfig {
    MetricsConfig {
        stations: model.graph.station_ids(),
        horizon_us: secs_to_us(cfg.horizon_s),
        warmup_us: secs_to_us(cfg.warmup_s),
        queue_bin_us: secs_to_us(model.run.queue_bin_s).max(1),
        count_segment: model.run.count_segment,
    }
}

/// Run one replication to the horizon.
pub fn run_replication(model: &Model, cfg: &ReplicationConfig) -> Result<RunOutput> {
    if !(cfg.warmup_s >= 0.0 && cfg.warmup_s < cfg.horizon_s) {
        return Err(Error::Config(format!(
            "warm-up {} s must lie in [0, horizon {} s)",
            cfg.warmup_s, cfg.horizon_s
        )));
    }
    let mut sim = Sim::new(model, cfg)?;
    sim.run()?;
    Ok(RunOutput {
        metrics: sim.acc.summarize(),
        trips: sim.acc.trips().to_vec(),
        trace: sim.trace,
        events: sim.popped,
    })
}

#[derive(Clone, Copy, Debug)]
pub(super) enum Action {
    NextArrival { station: NodeId, gen: u64 },
    WindowChange { window: usize },
    Renege { group: GroupId },
    Boundary { vehicle: VehicleId },
    BerthEnter { vehicle: VehicleId },
    OutBufferEnter { vehicle: VehicleId },
    BoardEnd { vehicle: VehicleId },
    AlightEnd { vehicle: VehicleId },
    LinkFail { segment: SegmentId },
    LinkRestore { segment: SegmentId },
    WarmupEnd,
    SimEnd,
}

#[derive(Clone, Copy, Debug)]
pub(super) struct Motion {
    pub plan: SectorPlan,
    pub t0: Timestamp,
}

#[derive(Clone, Debug)]
pub(super) struct Track {
    /// Sector boundary index on `path[0]` where the current movement began.
    pub boundary: u32,
    /// Speed at that boundary.
    pub v: f64,
    pub motion: Option<Motion>,
    /// Stopped at the end of `path[0]` waiting to pass a station node.
    pub pass_through: bool,
}

#[derive(Clone, Debug)]
pub(super) enum Place {
    Track(Track),
    /// Moving from the station entry into a berth.
    Spur { node: NodeId, berth: usize },
    Berth { node: NodeId, berth: usize },
    InBuffer { node: NodeId },
    /// Moving from a berth into the output buffer.
    ToOutBuffer { node: NodeId },
    OutBuffer { node: NodeId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum Block {
    Vehicle(VehicleId),
    Node(NodeId),
    Network,
}

#[derive(Clone, Debug)]
pub(super) struct TripLog {
    pub t_depart: Timestamp,
    pub route_len_um: u64,
    pub segments: Vec<SegmentId>,
}

#[derive(Clone, Debug)]
pub(super) struct Vehicle {
    pub id: VehicleId,
    pub place: Place,
    /// Remaining route; `path[0]` is the current segment while on track.
    pub path: Vec<SegmentId>,
    /// Path index up to which fork choices are fixed.
    pub decided: usize,
    pub load: Option<GroupId>,
    /// Station whose call this vehicle is heading to serve.
    pub claim: Option<NodeId>,
    pub dest: Option<NodeId>,
    pub stranded: bool,
    pub idle_since: Option<Timestamp>,
    pub busy: bool,
    pub ready_to_leave: bool,
    pub odo_um: u64,
    pub odo_warm_um: u64,
    pub trip: Option<TripLog>,
    pub blocked: Option<Block>,
}

impl Vehicle {
    pub fn track(&self) -> Option<&Track> {
        match &self.place {
            Place::Track(t) => Some(t),
            _ => None,
        }
    }

    pub fn track_mut(&mut self) -> Option<&mut Track> {
        match &mut self.place {
            Place::Track(t) => Some(t),
            _ => None,
        }
    }

    /// Station or capacitor the vehicle is parked in or moving through.
    pub fn station_node(&self) -> Option<NodeId> {
        match self.place {
            Place::Track(_) => None,
            Place::Spur { node, .. }
            | Place::Berth { node, .. }
            | Place::InBuffer { node }
            | Place::ToOutBuffer { node }
            | Place::OutBuffer { node } => Some(node),
        }
    }
}

#[derive(Clone, Debug)]
pub(super) struct Depot {
    pub st: StationState,
    /// Vehicles waiting to leave onto the outgoing segment, in request order.
    pub launch: VecDeque<VehicleId>,
    /// Arrival stopped at the entry because nothing was free.
    pub held: Option<VehicleId>,
}

#[derive(Clone, Debug, Default)]
pub(super) struct Merge {
    pub holder: Option<VehicleId>,
    pub requests: BTreeSet<VehicleId>,
}

pub(super) struct Sim<'m> {
    pub m: &'m Model,
    pub g: &'m NetworkGraph,
    pub spec: VehicleSpec,
    pub buf: EventBuffer<Action>,
    pub acc: Accumulator,
    pub trace: Option<Vec<TraceEvent>>,
    pub now: Timestamp,
    pub horizon_us: Timestamp,
    pub warmup_us: Timestamp,
    pub lookahead: f64,
    cur_seq: Option<u64>,
    popped: u64,
    station_rng: BTreeMap<NodeId, ChaCha8Rng>,
    service_rng: ChaCha8Rng,
    arrival_gen: BTreeMap<NodeId, u64>,
    window: usize,
    pub groups: BTreeMap<GroupId, PassengerGroup>,
    next_group: u64,
    pub depots: BTreeMap<NodeId, Depot>,
    pub vehicles: Vec<Vehicle>,
    pub calls: VecDeque<Call>,
    pub cost: CostModel,
    dist: BTreeMap<NodeId, BTreeMap<NodeId, f64>>,
    pub on_seg: HashMap<SegmentId, Vec<VehicleId>>,
    congestion: HashMap<SegmentId, (f64, Timestamp)>,
    pub merges: BTreeMap<NodeId, Merge>,
    waiters_v: HashMap<VehicleId, BTreeSet<VehicleId>>,
    waiters_n: HashMap<NodeId, BTreeSet<VehicleId>>,
    waiters_net: BTreeSet<VehicleId>,
    wake: VecDeque<VehicleId>,
    pub dirty: BTreeSet<NodeId>,
}

impl<'m> Sim<'m> {
    pub fn new(m: &'m Model, cfg: &ReplicationConfig) -> Result<Self> {
        let g = &m.graph;
        let mcfg = metrics_config(m, cfg);
        let max_sector = g.segments().iter().map(|s| s.sector_len()).fold(0.0, f64::max);
        let spec = m.vehicle.clone();
        let lookahead = spec.braking_distance(spec.v_max) + spec.s_static + 4.0 * max_sector + 1.0;

        // stream 0: service times; stream 1 + station id: arrivals at that station
        let mut service_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        service_rng.set_stream(0);
        let station_rng = m
            .demand
            .stations
            .iter()
            .map(|&s| {
                let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
                r.set_stream(1 + s.0 as u64);
                (s, r)
            })
            .collect();

        let mut depots = BTreeMap::new();
        for (&n, spec) in g.stations() {
            depots.insert(n, Depot { st: StationState::station(n, spec), launch: VecDeque::new(), held: None });
        }
        for (&n, spec) in g.capacitors() {
            depots.insert(n, Depot { st: StationState::capacitor(n, spec), launch: VecDeque::new(), held: None });
        }
        let cost = CostModel::new(m.routing.w_len, m.routing.w_time, m.routing.w_cong);

        let mut sim = Sim {
            m,
            g,
            spec,
            buf: EventBuffer::new(),
            acc: Accumulator::new(mcfg.clone()),
            trace: cfg.trace.then(Vec::new),
            now: 0,
            horizon_us: mcfg.horizon_us,
            warmup_us: mcfg.warmup_us,
            lookahead,
            cur_seq: None,
            popped: 0,
            station_rng,
            service_rng,
            arrival_gen: BTreeMap::new(),
            window: 0,
            groups: BTreeMap::new(),
            next_group: 0,
            depots,
            vehicles: Vec::new(),
            calls: VecDeque::new(),
            cost,
            dist: BTreeMap::new(),
            on_seg: HashMap::new(),
            congestion: HashMap::new(),
            merges: BTreeMap::new(),
            waiters_v: HashMap::new(),
            waiters_n: HashMap::new(),
            waiters_net: BTreeSet::new(),
            wake: VecDeque::new(),
            dirty: BTreeSet::new(),
        };
        sim.refresh_distances();
        sim.place_fleet()?;
        sim.schedule_initial()?;
        Ok(sim)
    }

    fn place_fleet(&mut self) -> Result<()> {
        let caps: Vec<NodeId> = self.g.capacitor_ids();
        let stations: Vec<NodeId> = self.g.station_ids();
        let order: Vec<NodeId> = match self.m.fleet.placement {
            Placement::Capacitors => caps,
            Placement::Stations => stations.into_iter().chain(caps).collect(),
        };
        let mut k = 0usize;
        for i in 0..self.m.fleet.size {
            let id = VehicleId(i);
            // round-robin over places that still have a free slot
            let mut placed = None;
            for step in 0..order.len() {
                let node = order[(k + step) % order.len()];
                let depot = self.depots.get_mut(&node).expect("depot exists");
                if let Some(berth) = depot.st.place_initial(id) {
                    placed = Some((node, berth));
                    k = (k + step + 1) % order.len();
                    break;
                }
            }
            let (node, berth) = placed.ok_or_else(|| Error::Config("fleet does not fit into its parking places".into()))?;
            self.vehicles.push(Vehicle {
                id,
                place: Place::Berth { node, berth },
                path: Vec::new(),
                decided: 0,
                load: None,
                claim: None,
                dest: None,
                stranded: false,
                idle_since: Some(0),
                busy: false,
                ready_to_leave: false,
                odo_um: 0,
                odo_warm_um: 0,
                trip: None,
                blocked: None,
            });
            self.emit(EventKind::BerthEnter, |e| {
                e.vehicle(id).node(node).detail(Detail { berth: Some(berth as u32), idle_delta: Some(1), ..Detail::default() })
            });
        }
        Ok(())
    }

    fn schedule_initial(&mut self) -> Result<()> {
        self.buf.schedule(self.warmup_us, Action::WarmupEnd)?;
        self.buf.schedule(self.horizon_us, Action::SimEnd)?;
        for (k, w) in self.m.demand.windows.iter().enumerate().skip(1) {
            let t = secs_to_us(w.start_s);
            if t < self.horizon_us {
                self.buf.schedule(t, Action::WindowChange { window: k })?;
            }
        }
        for f in &self.m.routing.failures {
            let t = secs_to_us(f.t_fail_s);
            if t < self.horizon_us {
                self.buf.schedule(t, Action::LinkFail { segment: f.segment })?;
            }
            if let Some(r) = f.t_restore_s {
                let t = secs_to_us(r);
                if t < self.horizon_us {
                    self.buf.schedule(t, Action::LinkRestore { segment: f.segment })?;
                }
            }
        }
        self.restart_arrivals()
    }

    fn run(&mut self) -> Result<()> {
        while let Some((t, seq, action)) = self.buf.pop() {
            self.now = t;
            self.popped += 1;
            self.cur_seq = Some(seq);
            let end = matches!(action, Action::SimEnd);
            self.handle(action).map_err(|e| match e {
                Error::InvariantBreach { message, .. } => Error::InvariantBreach {
                    t_us: t,
                    seq,
                    kind: format!("{action:?}"),
                    message,
                },
                other => other,
            })?;
            self.settle()?;
            self.cur_seq = None;
            if self.m.motion.safety_check {
                self.check_separation().map_err(|message| Error::InvariantBreach {
                    t_us: t,
                    seq,
                    kind: format!("{action:?}"),
                    message,
                })?;
            }
            if end {
                break;
            }
        }
        Ok(())
    }

    fn handle(&mut self, action: Action) -> Result<()> {
        match action {
            Action::NextArrival { station, gen } => self.on_arrival_due(station, gen)?,
            Action::WindowChange { window } => {
                self.window = window;
                self.emit(EventKind::WindowChange, |e| e.detail(Detail { window: Some(window as u32), ..Detail::default() }));
                self.restart_arrivals()?;
            }
            Action::Renege { group } => self.on_renege(group),
            Action::Boundary { vehicle } => self.on_boundary(vehicle)?,
            Action::BerthEnter { vehicle } => self.on_berth_enter(vehicle)?,
            Action::OutBufferEnter { vehicle } => self.on_out_buffer_enter(vehicle),
            Action::BoardEnd { vehicle } => self.on_board_end(vehicle),
            Action::AlightEnd { vehicle } => self.on_alight_end(vehicle)?,
            Action::LinkFail { segment } => self.on_link_fail(segment)?,
            Action::LinkRestore { segment } => self.on_link_restore(segment)?,
            Action::WarmupEnd => {
                for v in &mut self.vehicles {
                    v.odo_warm_um = v.odo_um;
                }
                let n = self.vehicles.len() as u32;
                self.emit(EventKind::WarmupEnd, |e| e.detail(Detail { vehicles: Some(n), ..Detail::default() }));
            }
            Action::SimEnd => {
                let in_system = self.groups.values().filter(|g| g.outcome == GroupOutcome::InSystemAtEnd).count() as u64;
                let odo: u64 = self.vehicles.iter().map(|v| v.odo_um - v.odo_warm_um).sum();
                let n = self.vehicles.len() as u32;
                self.emit(EventKind::SimEnd, |e| {
                    e.detail(Detail {
                        groups_in_system: Some(in_system),
                        vehicles: Some(n),
                        odometer_um: Some(odo),
                        ..Detail::default()
                    })
                });
            }
        }
        Ok(())
    }

    /// Record an event: accumulators always, the trace when registered.
    pub fn emit(&mut self, kind: EventKind, build: impl FnOnce(TraceEvent) -> TraceEvent) {
        let seq = match self.cur_seq.take() {
            Some(s) => s,
            None => self.buf.next_seq(),
        };
        let e = build(TraceEvent::new(self.now, seq, kind));
        self.acc.record(&e);
        if let Some(trace) = &mut self.trace {
            if self.m.registration.includes(kind) {
                trace.push(e);
            }
        }
    }

    pub fn schedule(&mut self, t: Timestamp, action: Action) -> Result<()> {
        self.buf.schedule(t, action).map(|_| ())
    }

    pub fn sample_service(&mut self, alight: bool) -> Timestamp {
        let d = if alight { self.m.demand.alight_time } else { self.m.demand.board_time };
        let u: f64 = self.service_rng.gen();
        secs_to_us(sample_triangular(&d, u))
    }

    // --- wake-ups --------------------------------------------------------

    pub fn block(&mut self, v: VehicleId, on: Block) {
        self.vehicles[v.0 as usize].blocked = Some(on);
        match on {
            Block::Vehicle(l) => {
                self.waiters_v.entry(l).or_default().insert(v);
            }
            Block::Node(n) => {
                self.waiters_n.entry(n).or_default().insert(v);
            }
            Block::Network => {
                self.waiters_net.insert(v);
            }
        }
    }

    pub fn notify_vehicle(&mut self, l: VehicleId) {
        if let Some(ws) = self.waiters_v.remove(&l) {
            self.wake.extend(ws);
        }
    }

    pub fn notify_node(&mut self, n: NodeId) {
        if let Some(ws) = self.waiters_n.remove(&n) {
            self.wake.extend(ws);
        }
    }

    pub fn wake_one(&mut self, v: VehicleId) {
        self.wake.push_back(v);
    }

    /// Run station updates and wake-ups until nothing changes.
    fn settle(&mut self) -> Result<()> {
        let mut rounds = 0u64;
        loop {
            if let Some(n) = self.dirty.pop_first() {
                self.station_changed(n)?;
            } else if let Some(v) = self.wake.pop_front() {
                let veh = &mut self.vehicles[v.0 as usize];
                if veh.blocked.take().is_some() {
                    self.resume(v)?;
                }
            } else {
                return Ok(());
            }
            rounds += 1;
            if rounds > 10_000_000 {
                return Err(Error::InvariantBreach {
                    t_us: self.now,
                    seq: 0,
                    kind: "settle".into(),
                    message: "wake-up loop does not converge".into(),
                });
            }
        }
    }

    // --- demand -----------------------------------------------------------

    fn restart_arrivals(&mut self) -> Result<()> {
        let stations = self.m.demand.stations.clone();
        for s in stations {
            let gen = self.arrival_gen.entry(s).or_insert(0);
            *gen += 1;
            let gen = *gen;
            self.schedule_next_arrival(s, gen)?;
        }
        Ok(())
    }

    fn schedule_next_arrival(&mut self, station: NodeId, gen: u64) -> Result<()> {
        let d = &self.m.demand;
        let w = &d.windows[self.window];
        let idx = d.station_index(station).expect("demand station");
        let lambda = w.lambda_per_h[idx];
        if !(lambda > 0.0) {
            return Ok(());
        }
        let end = secs_to_us(w.end_s);
        let u: f64 = self.station_rng.get_mut(&station).expect("station stream").gen();
        let t = self.now.saturating_add(secs_to_us(sample_interarrival(lambda, u)));
        if t < end && t <= self.horizon_us {
            self.schedule(t, Action::NextArrival { station, gen })?;
        }
        Ok(())
    }

    fn on_arrival_due(&mut self, station: NodeId, gen: u64) -> Result<()> {
        if self.arrival_gen.get(&station) != Some(&gen) {
            return Ok(());
        }
        self.emit(EventKind::NextArrivalDue, |e| e.node(station));
        let d = &self.m.demand;
        let origin = d.station_index(station).expect("demand station");
        let rng = self.station_rng.get_mut(&station).expect("station stream");
        let (u_dest, u_size): (f64, f64) = (rng.gen(), rng.gen());
        let dest_idx = sample_destination(d.odm_row(self.window, origin), u_dest);
        let size = sample_group_size(&d.group_size_dist, u_size);
        let destination = d.stations[dest_idx];
        let id = GroupId(self.next_group);
        self.next_group += 1;
        self.groups.insert(
            id,
            PassengerGroup {
                id,
                size,
                origin: station,
                destination,
                t_appear: self.now,
                t_board_start: None,
                t_depart: None,
                t_arrive: None,
                outcome: GroupOutcome::InSystemAtEnd,
            },
        );
        self.emit(EventKind::GroupAppears, |e| {
            e.group(id).node(station).detail(Detail { size: Some(size), destination: Some(destination), ..Detail::default() })
        });
        self.depots.get_mut(&station).expect("station depot").st.enqueue_group(id);
        self.emit(EventKind::QueueJoin, |e| e.group(id).node(station));
        self.calls.push_back(Call { station, group: id, t_issued: self.now });
        if let Some(t) = self.m.demand.renege_timeout_s {
            let at = self.now.saturating_add(secs_to_us(t));
            if at <= self.horizon_us {
                self.schedule(at, Action::Renege { group: id })?;
            }
        }
        self.schedule_next_arrival(station, gen)?;
        self.dispatch()
    }

    fn on_renege(&mut self, group: GroupId) {
        let Some(g) = self.groups.get(&group) else { return };
        if g.t_board_start.is_some() || g.outcome != GroupOutcome::InSystemAtEnd {
            return;
        }
        let station = g.origin;
        let depot = self.depots.get_mut(&station).expect("station depot");
        if !depot.st.remove_group(group) {
            return;
        }
        self.emit(EventKind::QueueLeave, |e| e.group(group).node(station));
        self.emit(EventKind::Renege, |e| e.group(group).node(station));
        self.groups.get_mut(&group).expect("group").outcome = GroupOutcome::Reneged;
        if let Some(pos) = self.calls.iter().position(|c| c.group == group) {
            self.calls.remove(pos);
        }
        self.balance_calls(station);
    }

    /// Keep unassigned calls plus claimed vehicles from exceeding the queue.
    pub fn balance_calls(&mut self, station: NodeId) {
        let queue = self.depots[&station].st.queue.len();
        let claimed = self.vehicles.iter().filter(|v| v.claim == Some(station)).count();
        loop {
            let pending = self.calls.iter().filter(|c| c.station == station).count();
            if pending == 0 || pending + claimed <= queue {
                break;
            }
            let last = self.calls.iter().rposition(|c| c.station == station).expect("pending call");
            self.calls.remove(last);
        }
    }

    // --- fleet --------------------------------------------------------------

    pub fn refresh_distances(&mut self) {
        let failed = self.cost.failed().clone();
        let mut dist = BTreeMap::new();
        for n in self.depots.keys().copied().collect::<Vec<_>>() {
            dist.insert(n, distances_from(self.g, &failed, n));
        }
        self.dist = dist;
    }

    pub fn distance(&self, from: NodeId, to: NodeId) -> Option<f64> {
        self.dist.get(&from).and_then(|m| m.get(&to)).copied()
    }

    fn idle_vehicles(&self) -> Vec<IdleVehicle> {
        self.vehicles
            .iter()
            .filter_map(|v| match (v.idle_since, &v.place) {
                (Some(since), Place::Berth { node, .. }) => Some(IdleVehicle { vehicle: v.id, node: *node, idle_since: since }),
                _ => None,
            })
            .collect()
    }

    /// Serve waiting calls in order with the current idle vehicles.
    pub fn dispatch(&mut self) -> Result<()> {
        let mut i = 0;
        while i < self.calls.len() {
            let idle = self.idle_vehicles();
            if idle.is_empty() {
                break;
            }
            let call = self.calls[i];
            let pick = allocate_vehicle(&call, &idle, &self.m.policy, |a, b| self.distance(a, b));
            match pick {
                Some(v) => {
                    self.calls.remove(i);
                    self.assign(v, call)?;
                }
                None => i += 1,
            }
        }
        Ok(())
    }

    fn assign(&mut self, v: VehicleId, call: Call) -> Result<()> {
        let veh = &mut self.vehicles[v.0 as usize];
        let Place::Berth { node, .. } = veh.place else { unreachable!("idle vehicles are parked") };
        veh.idle_since = None;
        veh.claim = Some(call.station);
        self.emit(EventKind::VehicleSeized, |e| {
            e.vehicle(v).group(call.group).node(node).detail(Detail {
                destination: Some(call.station),
                idle_delta: Some(-1),
                ..Detail::default()
            })
        });
        if node == call.station {
            self.try_board(v)?;
        } else {
            self.emit(EventKind::EmptyTripStart, |e| {
                e.vehicle(v).node(node).detail(Detail { destination: Some(call.station), ..Detail::default() })
            });
            self.begin_departure(v, call.station);
        }
        Ok(())
    }

    /// Capacitor with room (counting vehicles already heading there) closest
    /// to `from`, lowest id on ties.
    pub fn nearest_capacitor_with_space(&self, from: NodeId) -> Option<NodeId> {
        self.g
            .capacitor_ids()
            .into_iter()
            .filter(|&c| c != from)
            .filter(|&c| {
                let d = &self.depots[&c];
                let inbound = self.vehicles.iter().filter(|v| v.dest == Some(c) && v.station_node() != Some(c)).count();
                d.st.vehicles_present() + inbound < d.st.berth_count()
            })
            .filter_map(|c| self.distance(from, c).map(|d| (d, c)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, c)| c)
    }

    fn station_views(&self, exclude: VehicleId) -> Vec<StationView> {
        self.g
            .station_ids()
            .into_iter()
            .map(|s| {
                let inbound = self
                    .vehicles
                    .iter()
                    .filter(|v| v.id != exclude && (v.claim == Some(s) || (v.dest == Some(s) && v.load.is_none())))
                    .filter(|v| v.station_node() != Some(s))
                    .count() as u32;
                let idle = self
                    .vehicles
                    .iter()
                    .filter(|v| v.id != exclude && v.idle_since.is_some() && v.station_node() == Some(s))
                    .count() as u32;
                StationView { station: s, queue_len: self.depots[&s].st.queue.len() as u32, inbound, idle }
            })
            .collect()
    }

    /// A vehicle just became empty and unclaimed in a berth.
    pub fn on_idle(&mut self, v: VehicleId) -> Result<()> {
        self.dispatch()?;
        let veh = &self.vehicles[v.0 as usize];
        if veh.idle_since.is_none() {
            return Ok(());
        }
        let Place::Berth { node, .. } = veh.place else { return Ok(()) };
        if self.g.kind(node) != Some(NodeKind::Station) {
            return Ok(());
        }
        let views = self.station_views(v);
        let action = on_vehicle_released(node, &self.m.policy, &views, self.nearest_capacitor_with_space(node));
        if let ReleaseAction::EmptyTripTo(target) = action {
            if target != node && self.distance(node, target).is_some() {
                self.send_empty(v, node, target);
            }
        }
        Ok(())
    }

    /// Send an idle parked vehicle on an empty trip.
    pub fn send_empty(&mut self, v: VehicleId, node: NodeId, target: NodeId) {
        self.vehicles[v.0 as usize].idle_since = None;
        self.emit(EventKind::EmptyTripStart, |e| {
            e.vehicle(v).node(node).detail(Detail { destination: Some(target), idle_delta: Some(-1), ..Detail::default() })
        });
        self.begin_departure(v, target);
    }

    // --- routing ------------------------------------------------------------

    /// Cheapest path under current costs; congestion is refreshed first.
    pub fn route(&mut self, from: NodeId, to: NodeId) -> Option<Vec<SegmentId>> {
        if from == to {
            return None;
        }
        self.refresh_congestion();
        shortest_route(self.g, &self.cost, from, to).map(|r| r.path)
    }

    pub(super) fn refresh_congestion(&mut self) {
        if self.cost.w_cong == 0.0 {
            return;
        }
        let ids: Vec<SegmentId> = self.g.segments().iter().map(|s| s.id).collect();
        for s in ids {
            let c = self.congestion_level(s);
            self.cost.set_congestion(s, c);
        }
    }

    fn congestion_level(&self, s: SegmentId) -> f64 {
        let (ema, last) = self.congestion.get(&s).copied().unwrap_or((0.0, 0));
        let level = self.occupancy(s);
        let h = self.m.routing.congestion_horizon_s;
        let keep = (-((self.now - last) as f64) / 1e6 / h).exp();
        ema * keep + level * (1.0 - keep)
    }

    fn occupancy(&self, s: SegmentId) -> f64 {
        let n = self.on_seg.get(&s).map_or(0, |v| v.len());
        n as f64 / self.g.seg(s).sector_count.max(1) as f64
    }

    pub fn enter_segment(&mut self, v: VehicleId, s: SegmentId) {
        let c = self.congestion_level(s);
        self.congestion.insert(s, (c, self.now));
        self.on_seg.entry(s).or_default().push(v);
    }

    pub fn leave_segment(&mut self, v: VehicleId, s: SegmentId) {
        let c = self.congestion_level(s);
        self.congestion.insert(s, (c, self.now));
        if let Some(list) = self.on_seg.get_mut(&s) {
            list.retain(|&x| x != v);
        }
    }

    // --- failures -----------------------------------------------------------

    fn on_link_fail(&mut self, segment: SegmentId) -> Result<()> {
        self.cost.set_failed(segment, true);
        self.refresh_distances();
        self.emit(EventKind::LinkFail, |e| e.segment(segment));
        let mut states = Vec::new();
        let mut prefix_len = HashMap::new();
        for v in &self.vehicles {
            let Some(t) = v.track() else { continue };
            let Some(dest) = v.dest else { continue };
            if v.stranded {
                continue;
            }
            let committed = self.committed_len(v, t);
            let on = v.path[0];
            let decision_node = self.g.seg(v.path[committed]).to;
            states.push(VehicleRouteState {
                vehicle: v.id,
                on_segment: on,
                committed: v.path[1..=committed].to_vec(),
                decision_node,
                planned: v.path[committed + 1..].to_vec(),
                destination: dest,
            });
            prefix_len.insert(v.id, committed + 1);
        }
        let actions = handle_link_failure(self.g, &self.cost, segment, &states);
        for (vid, action) in actions {
            let keep = prefix_len[&vid];
            self.apply_failure_action(vid, keep, action)?;
        }
        Ok(())
    }

    /// Index of the last path segment the vehicle can no longer avoid.
    fn committed_len(&self, v: &Vehicle, t: &Track) -> usize {
        let seg0 = self.g.seg(v.path[0]);
        let sl = seg0.sector_len();
        let (x_end, v_end) = match &t.motion {
            Some(m) => ((t.boundary + 1) as f64 * sl, m.plan.v_exit),
            None => (t.boundary as f64 * sl, t.v),
        };
        let stop = x_end + v_end * v_end / (2.0 * self.spec.b_max);
        let mut offset = seg0.len();
        let mut j = 0;
        while j + 1 < v.path.len() && offset < stop - 1e-9 {
            j += 1;
            offset += self.g.seg(v.path[j]).len();
        }
        j
    }

    fn apply_failure_action(&mut self, vid: VehicleId, keep: usize, action: FailureAction) -> Result<()> {
        let i = vid.0 as usize;
        match action {
            FailureAction::Unchanged => return Ok(()),
            FailureAction::Stranded { at } => {
                let veh = &mut self.vehicles[i];
                let cut = match at {
                    None => 1,
                    Some(n) => veh.path.iter().position(|&s| self.g.seg(s).to == n).map_or(1, |p| p + 1),
                };
                veh.path.truncate(cut.max(1));
                veh.stranded = true;
                let seg = veh.path[0];
                self.emit(EventKind::Stranded, |e| {
                    let e = e.vehicle(vid).segment(seg);
                    match at {
                        Some(n) => e.node(n),
                        None => e,
                    }
                });
            }
            FailureAction::Reroute { path } => {
                let veh = &mut self.vehicles[i];
                veh.path.truncate(keep);
                veh.path.extend(path);
                veh.decided = veh.decided.min(keep);
                let dest = veh.dest;
                self.emit(EventKind::Reroute, |e| {
                    let e = e.vehicle(vid);
                    match dest {
                        Some(d) => e.node(d),
                        None => e,
                    }
                });
            }
            FailureAction::Retarget { destination, path } => {
                let veh = &mut self.vehicles[i];
                veh.path.truncate(keep);
                veh.path.extend(path);
                veh.decided = veh.decided.min(keep);
                veh.dest = Some(destination);
                if veh.claim.is_some() {
                    // the call goes back to the pool
                    let station = veh.claim.take().expect("claim");
                    if let Some(&g) = self.depots[&station].st.queue.back() {
                        self.calls.push_back(Call { station, group: g, t_issued: self.now });
                    }
                }
                if let Some(g) = self.vehicles[i].load {
                    self.groups.get_mut(&g).expect("group").destination = destination;
                }
                self.emit(EventKind::Retarget, |e| e.vehicle(vid).node(destination));
            }
        }
        self.drop_stale_merges(vid);
        if self.vehicles[i].blocked.is_some() {
            self.wake_one(vid);
        }
        Ok(())
    }

    fn on_link_restore(&mut self, segment: SegmentId) -> Result<()> {
        self.cost.set_failed(segment, false);
        self.refresh_distances();
        self.emit(EventKind::LinkRestore, |e| e.segment(segment));
        for i in 0..self.vehicles.len() {
            if !self.vehicles[i].stranded {
                continue;
            }
            let end = self.g.seg(*self.vehicles[i].path.last().expect("stranded on track")).to;
            let Some(dest) = self.vehicles[i].dest else { continue };
            let extra = if end == dest { Some(Vec::new()) } else { self.route(end, dest) };
            if let Some(extra) = extra {
                let veh = &mut self.vehicles[i];
                veh.path.extend(extra);
                veh.stranded = false;
                let vid = veh.id;
                self.emit(EventKind::Reroute, |e| e.vehicle(vid).node(dest));
                if self.vehicles[i].blocked.is_some() {
                    self.wake_one(vid);
                }
            }
        }
        let waiting = std::mem::take(&mut self.waiters_net);
        self.wake.extend(waiting);
        let nodes: Vec<NodeId> = self.depots.keys().copied().collect();
        self.dirty.extend(nodes);
        self.dispatch()
    }
}
