//! Run statistics built from the event stream.
//!
//! The simulator and trace replay feed the same [`Accumulator`], and every
//! running total is an integer (microseconds, micrometres, counts), so a
//! replayed trace reproduces a run's [`Metrics`] exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::demand::GroupId;
use crate::kernel::event::{us_to_secs, EventKind, Timestamp, TraceEvent, US_PER_S};
use crate::motion::{min_travel_time, VehicleSpec};
use crate::network::{NetworkGraph, NodeId, SegmentId};

/// Free-flow rest-to-rest time over `route`, in seconds.
pub fn min_trip_time(g: &NetworkGraph, route: &[SegmentId], spec: &VehicleSpec) -> f64 {
    let stretches: Vec<(f64, f64)> = route
        .iter()
        .map(|&s| {
            let seg = g.seg(s);
            (seg.len(), seg.v_limit)
        })
        .collect();
    min_travel_time(&stretches, spec.v_max, spec.a_max, spec.b_max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub group: GroupId,
    pub origin: NodeId,
    pub destination: NodeId,
    pub size: u32,
    pub t_appear_s: f64,
    pub wait_s: f64,
    pub min_time_s: f64,
    pub actual_time_s: f64,
    pub delay_s: f64,
    pub route_len_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationMetrics {
    /// Time-averaged queue length (groups).
    pub queue_mean: f64,
    pub queue_max: u64,
    pub wait_mean_s: Option<f64>,
    pub wait_p95_s: Option<f64>,
    /// Time-averaged number of idle vehicles parked at the station.
    pub idle_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub window_s: f64,
    pub groups_appeared: u64,
    pub groups_served: u64,
    pub groups_reneged: u64,
    pub groups_in_system: u64,
    pub vehicles_start: u32,
    pub vehicles_end: u32,
    /// Trips of groups that appeared after warm-up.
    pub trips: u64,
    pub trip_time_mean_s: Option<f64>,
    pub route_len_mean_m: Option<f64>,
    pub delay_mean_s: Option<f64>,
    pub wait_mean_s: Option<f64>,
    pub wait_p95_s: Option<f64>,
    pub odometer_full_um: u64,
    pub odometer_empty_um: u64,
    pub odometer_total_um: u64,
    pub mileage_full_m: f64,
    pub mileage_empty_m: f64,
    pub queue_mean_total: f64,
    pub queue_quarters: [f64; 4],
    pub saturated: bool,
    pub time_to_steady_s: Option<f64>,
    /// Vehicles per hour leaving the designated count segment.
    pub line_flow_vph: Option<f64>,
    pub emergency_brakes: u64,
    pub stations: BTreeMap<NodeId, StationMetrics>,
    /// Mean total queue length per bin over the whole run.
    pub queue_profile: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsConfig {
    pub stations: Vec<NodeId>,
    pub horizon_us: Timestamp,
    pub warmup_us: Timestamp,
    pub queue_bin_us: Timestamp,
    pub count_segment: Option<SegmentId>,
}

fn overlap(a0: u64, a1: u64, b0: u64, b1: u64) -> u64 {
    a1.min(b1).saturating_sub(a0.max(b0))
}

/// Piecewise-constant level integrated over fixed bins.
#[derive(Clone, Debug)]
struct Binned {
    start: u64,
    width: u64,
    end: u64,
    bins: Vec<u128>,
}

impl Binned {
    fn new(start: u64, end: u64, count: usize) -> Self {
        let width = if count == 0 { 1 } else { ((end - start) / count as u64).max(1) };
        Binned { start, width, end, bins: vec![0; count] }
    }

    fn with_width(start: u64, end: u64, width: u64) -> Self {
        let count = ((end - start) + width - 1) / width;
        Binned { start, width, end, bins: vec![0; count as usize] }
    }

    fn add(&mut self, t0: u64, t1: u64, level: u64) {
        if level == 0 || t1 <= t0 {
            return;
        }
        let n = self.bins.len();
        for (k, bin) in self.bins.iter_mut().enumerate() {
            let b0 = self.start + k as u64 * self.width;
            let b1 = if k + 1 == n { self.end } else { b0 + self.width };
            *bin += overlap(t0, t1, b0, b1) as u128 * level as u128;
        }
    }

    fn means(&self) -> Vec<f64> {
        let n = self.bins.len();
        self.bins
            .iter()
            .enumerate()
            .map(|(k, &area)| {
                let b0 = self.start + k as u64 * self.width;
                let b1 = if k + 1 == n { self.end } else { b0 + self.width };
                if b1 > b0 {
                    area as f64 / (b1 - b0) as f64
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default)]
struct Level {
    value: i64,
    last: u64,
    area: u128,
    max: u64,
}

impl Level {
    /// Integrate up to `t` over the window, then apply `delta`.
    fn step(&mut self, t: u64, delta: i64, window: (u64, u64)) {
        self.advance(t, window);
        self.value += delta;
        if t >= window.0 && t < window.1 {
            self.max = self.max.max(self.value.max(0) as u64);
        }
    }

    fn advance(&mut self, t: u64, window: (u64, u64)) {
        let v = self.value.max(0) as u64;
        self.area += overlap(self.last, t, window.0, window.1) as u128 * v as u128;
        if t > window.0 && self.last < window.1 {
            self.max = self.max.max(v);
        }
        self.last = self.last.max(t);
    }
}

#[derive(Clone, Debug, Default)]
struct StationAcc {
    queue: Level,
    idle: Level,
    waits: Vec<u64>,
}

/// Running totals for one replication.
#[derive(Clone, Debug)]
pub struct Accumulator {
    cfg: MetricsConfig,
    appeared: u64,
    served: u64,
    reneged: u64,
    in_system: u64,
    vehicles_start: u32,
    vehicles_end: u32,
    full_um: u64,
    empty_um: u64,
    total_um: u64,
    flow: u64,
    emergency: u64,
    stations: BTreeMap<NodeId, StationAcc>,
    total_queue: i64,
    total_last: u64,
    profile: Binned,
    quarters: Binned,
    trips: Vec<TripRecord>,
}

impl Accumulator {
    pub fn new(cfg: MetricsConfig) -> Self {
        assert!(cfg.warmup_us < cfg.horizon_us, "warm-up must end before the horizon");
        assert!(cfg.queue_bin_us > 0, "queue bin must be positive");
        let stations = cfg.stations.iter().map(|&s| (s, StationAcc::default())).collect();
        Accumulator {
            profile: Binned::with_width(0, cfg.horizon_us, cfg.queue_bin_us),
            quarters: Binned::new(cfg.warmup_us, cfg.horizon_us, 4),
            cfg,
            appeared: 0,
            served: 0,
            reneged: 0,
            in_system: 0,
            vehicles_start: 0,
            vehicles_end: 0,
            full_um: 0,
            empty_um: 0,
            total_um: 0,
            flow: 0,
            emergency: 0,
            stations,
            total_queue: 0,
            total_last: 0,
            trips: Vec::new(),
        }
    }

    fn window(&self) -> (u64, u64) {
        (self.cfg.warmup_us, self.cfg.horizon_us)
    }

    fn in_window(&self, t: u64) -> bool {
        t >= self.cfg.warmup_us && t <= self.cfg.horizon_us
    }

    fn queue_step(&mut self, t: u64, node: NodeId, delta: i64) {
        let window = self.window();
        if let Some(st) = self.stations.get_mut(&node) {
            st.queue.step(t, delta, window);
            let level = self.total_queue.max(0) as u64;
            self.profile.add(self.total_last, t, level);
            self.quarters.add(self.total_last, t, level);
            self.total_last = self.total_last.max(t);
            self.total_queue += delta;
        }
    }

    pub fn record(&mut self, e: &TraceEvent) {
        let t = e.t_us;
        let d = &e.detail;
        if let (Some(delta), Some(node)) = (d.idle_delta, e.node) {
            let window = self.window();
            if let Some(st) = self.stations.get_mut(&node) {
                st.idle.step(t, delta as i64, window);
            }
        }
        match e.kind {
            EventKind::GroupAppears => self.appeared += 1,
            EventKind::QueueJoin => {
                if let Some(n) = e.node {
                    self.queue_step(t, n, 1);
                }
            }
            EventKind::QueueLeave => {
                if let Some(n) = e.node {
                    self.queue_step(t, n, -1);
                }
            }
            EventKind::BoardStart => {
                if let (Some(n), Some(ta)) = (e.node, d.t_appear_us) {
                    if ta >= self.cfg.warmup_us {
                        if let Some(st) = self.stations.get_mut(&n) {
                            st.waits.push(t - ta);
                        }
                    }
                }
            }
            EventKind::Renege => self.reneged += 1,
            EventKind::TripEnd => {
                self.served += 1;
                if let Some(r) = trip_record(e) {
                    if d.t_appear_us.unwrap_or(0) >= self.cfg.warmup_us {
                        self.trips.push(r);
                    }
                }
            }
            EventKind::SectorBoundary => {
                if t >= self.cfg.warmup_us {
                    let dist = d.dist_um.unwrap_or(0);
                    if d.loaded == Some(true) {
                        self.full_um += dist;
                    } else {
                        self.empty_um += dist;
                    }
                }
            }
            EventKind::ArrivalAtNode => {
                if self.cfg.count_segment.is_some() && e.segment == self.cfg.count_segment && self.in_window(t) {
                    self.flow += 1;
                }
            }
            EventKind::EmergencyBrake => self.emergency += 1,
            EventKind::WarmupEnd => self.vehicles_start = d.vehicles.unwrap_or(0),
            EventKind::SimEnd => {
                self.in_system = d.groups_in_system.unwrap_or(0);
                self.vehicles_end = d.vehicles.unwrap_or(0);
                self.total_um = d.odometer_um.unwrap_or(0);
            }
            _ => {}
        }
    }

    pub fn trips(&self) -> &[TripRecord] {
        &self.trips
    }

    /// Close all integrals at the horizon and compute the report.
    pub fn summarize(&self) -> Metrics {
        let (w0, w1) = self.window();
        let window_us = w1 - w0;
        let window_s = us_to_secs(window_us);
        let mut profile = self.profile.clone();
        let mut quarters = self.quarters.clone();
        let level = self.total_queue.max(0) as u64;
        profile.add(self.total_last, w1, level);
        quarters.add(self.total_last, w1, level);

        let mut stations = BTreeMap::new();
        let mut all_waits = Vec::new();
        let mut queue_area = 0u128;
        for (&node, st) in &self.stations {
            let mut q = st.queue.clone();
            q.advance(w1, (w0, w1));
            let mut idle = st.idle.clone();
            idle.advance(w1, (w0, w1));
            queue_area += q.area;
            all_waits.extend_from_slice(&st.waits);
            stations.insert(
                node,
                StationMetrics {
                    queue_mean: q.area as f64 / window_us as f64,
                    queue_max: q.max,
                    wait_mean_s: mean_us(&st.waits),
                    wait_p95_s: p95_us(&st.waits),
                    idle_mean: idle.area as f64 / window_us as f64,
                },
            );
        }

        let trips = &self.trips;
        let mean_of = |f: fn(&TripRecord) -> f64| {
            if trips.is_empty() {
                None
            } else {
                Some(trips.iter().map(f).sum::<f64>() / trips.len() as f64)
            }
        };
        let q = quarters.means();
        let qarr = [q[0], q[1], q[2], q[3]];
        let profile = profile.means();
        let bin_s = us_to_secs(self.cfg.queue_bin_us);
        Metrics {
            window_s,
            groups_appeared: self.appeared,
            groups_served: self.served,
            groups_reneged: self.reneged,
            groups_in_system: self.in_system,
            vehicles_start: self.vehicles_start,
            vehicles_end: self.vehicles_end,
            trips: trips.len() as u64,
            trip_time_mean_s: mean_of(|r| r.actual_time_s),
            route_len_mean_m: mean_of(|r| r.route_len_m),
            delay_mean_s: mean_of(|r| r.delay_s),
            wait_mean_s: mean_us(&all_waits),
            wait_p95_s: p95_us(&all_waits),
            odometer_full_um: self.full_um,
            odometer_empty_um: self.empty_um,
            odometer_total_um: self.total_um,
            mileage_full_m: self.full_um as f64 / 1e6,
            mileage_empty_m: self.empty_um as f64 / 1e6,
            queue_mean_total: queue_area as f64 / window_us as f64,
            queue_quarters: qarr,
            saturated: is_saturated(&qarr),
            time_to_steady_s: time_to_steady(&profile).map(|k| k as f64 * bin_s),
            line_flow_vph: self.cfg.count_segment.map(|_| self.flow as f64 * 3600.0 / window_s),
            emergency_brakes: self.emergency,
            stations,
            queue_profile: profile,
        }
    }
}

fn trip_record(e: &TraceEvent) -> Option<TripRecord> {
    let d = &e.detail;
    let t_appear = d.t_appear_us?;
    let t_board = d.t_board_us?;
    let t_depart = d.t_depart_us?;
    let min_us = d.min_time_us?;
    let actual_us = e.t_us - t_depart;
    Some(TripRecord {
        group: e.group?,
        origin: d.origin?,
        destination: d.destination?,
        size: d.size?,
        t_appear_s: us_to_secs(t_appear),
        wait_s: us_to_secs(t_board - t_appear),
        min_time_s: us_to_secs(min_us),
        actual_time_s: us_to_secs(actual_us),
        delay_s: (actual_us as f64 - min_us as f64) / US_PER_S as f64,
        route_len_m: d.route_len_um? as f64 / 1e6,
    })
}

fn mean_us(xs: &[u64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().map(|&x| x as u128).sum::<u128>() as f64 / xs.len() as f64 / US_PER_S as f64)
    }
}

/// Nearest-rank 95th percentile.
fn p95_us(xs: &[u64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_unstable();
    let rank = (0.95 * v.len() as f64).ceil() as usize;
    Some(us_to_secs(v[rank.max(1) - 1]))
}

/// Queue keeps growing: each quarter above the previous and the last at
/// least double the first plus one group.
pub fn is_saturated(q: &[f64; 4]) -> bool {
    q.windows(2).all(|w| w[1] > w[0]) && q[3] >= 2.0 * q[0] + 1.0
}

/// First bin from which the next five bins average within the steady band
/// (second-half mean plus 25 %, at least half a group).
pub fn time_to_steady(profile: &[f64]) -> Option<usize> {
    if profile.is_empty() {
        return None;
    }
    let half = &profile[profile.len() / 2..];
    let reference = half.iter().sum::<f64>() / half.len() as f64;
    let band = reference + (0.25 * reference).max(0.5);
    (0..profile.len()).find(|&k| {
        let w = &profile[k..(k + 5).min(profile.len())];
        w.iter().sum::<f64>() / w.len() as f64 <= band
    })
}

/// Metrics of an event stream restricted to groups appearing after warm-up.
pub fn apply_warmup<'a>(events: impl IntoIterator<Item = &'a TraceEvent>, cfg: MetricsConfig) -> Metrics {
    let mut acc = Accumulator::new(cfg);
    for e in events {
        acc.record(e);
    }
    acc.summarize()
}
