//! Event vocabulary, the trace record, and the pending-event buffer.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::demand::GroupId;
use crate::error::{Error, Result};
use crate::network::{NodeId, SegmentId};
use crate::VehicleId;

/// Simulated time in microseconds.
pub type Timestamp = u64;

pub const US_PER_S: u64 = 1_000_000;

/// Seconds to microseconds, rounded to nearest. Infinite or huge inputs
/// saturate.
pub fn secs_to_us(s: f64) -> Timestamp {
    let us = (s * US_PER_S as f64).round();
    if us >= u64::MAX as f64 {
        u64::MAX
    } else if us <= 0.0 {
        0
    } else {
        us as u64
    }
}

/// Seconds to microseconds, rounded up; used for every kinematic duration.
pub fn secs_to_us_ceil(s: f64) -> Timestamp {
    let us = (s * US_PER_S as f64 - 1e-6).ceil();
    if us <= 0.0 {
        0
    } else {
        us as u64
    }
}

pub fn us_to_secs(t: Timestamp) -> f64 {
    t as f64 / US_PER_S as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    // management level
    GroupAppears,
    VehicleSeized,
    TripStart,
    TripEnd,
    EmptyTripStart,
    // coordination level
    QueueJoin,
    QueueLeave,
    BoardStart,
    BoardEnd,
    AlightStart,
    AlightEnd,
    BerthEnter,
    BerthLeave,
    BufferEnter,
    BufferLeave,
    SectorBoundary,
    MergeArbitration,
    ArrivalAtNode,
    Renege,
    NextArrivalDue,
    WindowChange,
    LinkFail,
    LinkRestore,
    SimEnd,
    // bookkeeping
    WarmupEnd,
    EmergencyBrake,
    Reroute,
    Retarget,
    Stranded,
}

impl EventKind {
    pub const ALL: [EventKind; 29] = [
        EventKind::GroupAppears,
        EventKind::VehicleSeized,
        EventKind::TripStart,
        EventKind::TripEnd,
        EventKind::EmptyTripStart,
        EventKind::QueueJoin,
        EventKind::QueueLeave,
        EventKind::BoardStart,
        EventKind::BoardEnd,
        EventKind::AlightStart,
        EventKind::AlightEnd,
        EventKind::BerthEnter,
        EventKind::BerthLeave,
        EventKind::BufferEnter,
        EventKind::BufferLeave,
        EventKind::SectorBoundary,
        EventKind::MergeArbitration,
        EventKind::ArrivalAtNode,
        EventKind::Renege,
        EventKind::NextArrivalDue,
        EventKind::WindowChange,
        EventKind::LinkFail,
        EventKind::LinkRestore,
        EventKind::SimEnd,
        EventKind::WarmupEnd,
        EventKind::EmergencyBrake,
        EventKind::Reroute,
        EventKind::Retarget,
        EventKind::Stranded,
    ];
}

/// Kind-specific payload. Only integer and boolean fields, so a trace
/// round-trips through JSON exactly.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detail {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_appear_us: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_board_us: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_depart_us: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_time_us: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route_len_um: Option<u64>,
    /// Distance covered by the movement this event completes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist_um: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loaded: Option<bool>,
    /// Change in the number of idle vehicles at `node`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idle_delta: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sector: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub berth: Option<u32>,
    /// Exit speed in µm/s (for playback).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_umps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granted: Option<VehicleId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_buffer: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups_in_system: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicles: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub odometer_um: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<u32>,
}

impl Detail {
    pub fn is_empty(&self) -> bool {
        *self == Detail::default()
    }
}

/// One processed event as written to the trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    pub t_us: Timestamp,
    pub seq: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicle: Option<VehicleId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<GroupId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<SegmentId>,
    #[serde(default, skip_serializing_if = "Detail::is_empty")]
    pub detail: Detail,
}

impl TraceEvent {
    pub fn new(t_us: Timestamp, seq: u64, kind: EventKind) -> Self {
        TraceEvent {
            t_us,
            seq,
            kind,
            vehicle: None,
            group: None,
            node: None,
            segment: None,
            detail: Detail::default(),
        }
    }

    pub fn vehicle(mut self, v: VehicleId) -> Self {
        self.vehicle = Some(v);
        self
    }

    pub fn group(mut self, g: GroupId) -> Self {
        self.group = Some(g);
        self
    }

    pub fn node(mut self, n: NodeId) -> Self {
        self.node = Some(n);
        self
    }

    pub fn segment(mut self, s: SegmentId) -> Self {
        self.segment = Some(s);
        self
    }

    pub fn detail(mut self, d: Detail) -> Self {
        self.detail = d;
        self
    }
}

struct Pending<A> {
    t: Timestamp,
    seq: u64,
    action: A,
}

impl<A> PartialEq for Pending<A> {
    fn eq(&self, other: &Self) -> bool {
        (self.t, self.seq) == (other.t, other.seq)
    }
}

impl<A> Eq for Pending<A> {}

impl<A> PartialOrd for Pending<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<A> Ord for Pending<A> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.t, other.seq).cmp(&(self.t, self.seq))
    }
}

/// Pending events ordered by (time, insertion sequence). The sequence
/// counter is also handed out for events that take effect immediately, so
/// every event of a replication has a unique seq.
pub struct EventBuffer<A> {
    heap: BinaryHeap<Pending<A>>,
    clock: Timestamp,
    next_seq: u64,
}

impl<A> Default for EventBuffer<A> {
    fn default() -> Self {
        EventBuffer { heap: BinaryHeap::new(), clock: 0, next_seq: 0 }
    }
}

impl<A> EventBuffer<A> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clock(&self) -> Timestamp {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn next_seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    /// Insert an event; returns its seq. Scheduling before the clock is an
    /// internal error.
    pub fn schedule(&mut self, t: Timestamp, action: A) -> Result<u64> {
        let seq = self.next_seq();
        if t < self.clock {
            return Err(Error::InvariantBreach {
                t_us: self.clock,
                seq,
                kind: "schedule".into(),
                message: format!("event scheduled at {t} us, before the clock"),
            });
        }
        self.heap.push(Pending { t, seq, action });
        Ok(seq)
    }

    pub fn peek_time(&self) -> Option<Timestamp> {
        self.heap.peek().map(|p| p.t)
    }

    /// Remove the minimum (t, seq) event and advance the clock to it.
    pub fn pop(&mut self) -> Option<(Timestamp, u64, A)> {
        let p = self.heap.pop()?;
        debug_assert!(p.t >= self.clock);
        self.clock = p.t;
        Some((p.t, p.seq, p.action))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pops_earliest_first() {
        let mut b = EventBuffer::new();
        b.schedule(5, "five").unwrap();
        b.schedule(3, "three").unwrap();
        assert_eq!(b.pop().map(|e| e.2), Some("three"));
        assert_eq!(b.pop().map(|e| e.2), Some("five"));
        assert_eq!(b.clock(), 5);
    }

    #[test]
    fn ties_pop_in_insertion_order() {
        let mut b = EventBuffer::new();
        b.schedule(3, 'a').unwrap();
        b.schedule(3, 'b').unwrap();
        assert_eq!(b.pop().map(|e| e.2), Some('a'));
        assert_eq!(b.pop().map(|e| e.2), Some('b'));
    }

    #[test]
    fn past_is_rejected() {
        let mut b = EventBuffer::new();
        b.schedule(10, ()).unwrap();
        b.pop();
        assert!(matches!(b.schedule(9, ()), Err(Error::InvariantBreach { .. })));
        assert!(b.schedule(10, ()).is_ok());
    }

    #[test]
    fn ceil_rounding() {
        assert_eq!(secs_to_us_ceil(1.0), 1_000_000);
        assert_eq!(secs_to_us_ceil(1.0000001), 1_000_001);
        assert_eq!(secs_to_us_ceil(0.0), 0);
        assert_eq!(secs_to_us(f64::INFINITY), u64::MAX);
    }

    #[test]
    fn trace_event_round_trips() {
        let e = TraceEvent::new(12, 3, EventKind::TripEnd)
            .vehicle(VehicleId(2))
            .node(NodeId(4))
            .detail(Detail { size: Some(2), route_len_um: Some(123_456_789), ..Detail::default() });
        let text = serde_json::to_string(&e).unwrap();
        assert!(!text.contains("group"));
        assert_eq!(serde_json::from_str::<TraceEvent>(&text).unwrap(), e);
    }

    proptest! {
        #[test]
        fn random_times_pop_sorted(times in proptest::collection::vec(0u64..1_000_000, 1..10_001)) {
            let mut b = EventBuffer::new();
            for (i, &t) in times.iter().enumerate() {
                b.schedule(t, i).unwrap();
            }
            let mut expected: Vec<(u64, usize)> = times.iter().copied().zip(0..).collect();
            expected.sort();
            let popped: Vec<(u64, usize)> = std::iter::from_fn(|| b.pop().map(|(t, _, i)| (t, i))).collect();
            prop_assert_eq!(popped, expected);
        }
    }
}
