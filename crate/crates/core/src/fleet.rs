//! Fleet management strategies. Every function here is a pure decision over
//! a snapshot passed in by the kernel, so alternative strategies can be
//! swapped in without touching event handling.

use serde::{Deserialize, Serialize};

use crate::demand::GroupId;
use crate::network::NodeId;
use crate::VehicleId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationRule {
    NearestIdle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyRule {
    StayAtStation,
    ReturnToCapacitor,
    ThresholdRebalance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetPolicy {
    pub allocation: AllocationRule,
    pub empty_rule: EmptyRule,
    /// Most idle vehicles a station keeps before sending extras away.
    pub stay_cap: u32,
    /// Rebalance toward a station only when queue minus inbound exceeds this.
    pub rebalance_threshold: i64,
    /// Allocation only considers idle vehicles within this network distance.
    pub neighborhood_m: Option<f64>,
}

impl Default for FleetPolicy {
    fn default() -> Self {
        FleetPolicy {
            allocation: AllocationRule::NearestIdle,
            empty_rule: EmptyRule::StayAtStation,
            stay_cap: 1,
            rebalance_threshold: 2,
            neighborhood_m: None,
        }
    }
}

impl FleetPolicy {
    pub fn check(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.rebalance_threshold < 0 {
            errs.push("rebalance_threshold must be non-negative".into());
        }
        if let Some(r) = self.neighborhood_m {
            if !(r > 0.0) {
                errs.push("neighborhood_m must be positive".into());
            }
        }
        errs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Call {
    pub station: NodeId,
    pub group: GroupId,
    pub t_issued: u64,
}

/// An empty, unclaimed vehicle parked at a station berth or in a capacitor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdleVehicle {
    pub vehicle: VehicleId,
    pub node: NodeId,
    pub idle_since: u64,
}

/// Nearest idle vehicle to the calling station, ties to the lowest id.
/// `distance(from, to)` is the network distance, `None` when unreachable.
pub fn allocate_vehicle(
    call: &Call,
    idle: &[IdleVehicle],
    policy: &FleetPolicy,
    distance: impl Fn(NodeId, NodeId) -> Option<f64>,
) -> Option<VehicleId> {
    match policy.allocation {
        AllocationRule::NearestIdle => idle
            .iter()
            .filter_map(|v| distance(v.node, call.station).map(|d| (d, v.vehicle)))
            .filter(|&(d, _)| policy.neighborhood_m.map_or(true, |r| d <= r))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, v)| v),
    }
}

/// Demand-side view of one station.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StationView {
    pub station: NodeId,
    pub queue_len: u32,
    /// Vehicles already heading to the station.
    pub inbound: u32,
    /// Idle vehicles parked there, not counting the one being released.
    pub idle: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReleaseAction {
    Stay,
    EmptyTripTo(NodeId),
}

/// What to do with a vehicle that just became empty and unclaimed at `at`.
pub fn on_vehicle_released(
    at: NodeId,
    policy: &FleetPolicy,
    stations: &[StationView],
    nearest_capacitor: Option<NodeId>,
) -> ReleaseAction {
    let idle_here = stations.iter().find(|s| s.station == at).map_or(0, |s| s.idle);
    let stay_or_park = || {
        if idle_here < policy.stay_cap {
            ReleaseAction::Stay
        } else {
            nearest_capacitor.map_or(ReleaseAction::Stay, ReleaseAction::EmptyTripTo)
        }
    };
    match policy.empty_rule {
        EmptyRule::StayAtStation => stay_or_park(),
        EmptyRule::ReturnToCapacitor => {
            nearest_capacitor.map_or(ReleaseAction::Stay, ReleaseAction::EmptyTripTo)
        }
        EmptyRule::ThresholdRebalance => {
            let target = stations
                .iter()
                .map(|s| (s.queue_len as i64 - s.inbound as i64, s.station))
                .filter(|&(deficit, _)| deficit > policy.rebalance_threshold)
                .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
            match target {
                Some((_, s)) if s == at => ReleaseAction::Stay,
                Some((_, s)) => ReleaseAction::EmptyTripTo(s),
                None => stay_or_park(),
            }
        }
    }
}

/// A vehicle occupying a berth; `idle_since` is set only when it is empty and
/// unclaimed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BerthOccupant {
    pub vehicle: VehicleId,
    pub idle_since: Option<u64>,
}

/// With every berth taken and a loaded vehicle approaching, pick the
/// longest-idle empty occupant to send away (lowest id on ties).
pub fn evict_for_arrival(berths_full: bool, occupants: &[BerthOccupant]) -> Option<VehicleId> {
    if !berths_full {
        return None;
    }
    occupants
        .iter()
        .filter_map(|o| o.idle_since.map(|t| (t, o.vehicle)))
        .min()
        .map(|(_, v)| v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist_table(from: NodeId, to: NodeId) -> Option<f64> {
        // stations on a line, 100 m apart, reachable both ways
        Some((from.0 as f64 - to.0 as f64).abs() * 100.0)
    }

    #[test]
    fn nearest_idle_wins() {
        let call = Call { station: NodeId(0), group: GroupId(0), t_issued: 0 };
        let idle = [
            IdleVehicle { vehicle: VehicleId(1), node: NodeId(5), idle_since: 0 },
            IdleVehicle { vehicle: VehicleId(2), node: NodeId(2), idle_since: 0 },
        ];
        assert_eq!(allocate_vehicle(&call, &idle, &FleetPolicy::default(), dist_table), Some(VehicleId(2)));
        assert_eq!(allocate_vehicle(&call, &[], &FleetPolicy::default(), dist_table), None);
    }

    #[test]
    fn equidistant_goes_to_lower_id() {
        let call = Call { station: NodeId(3), group: GroupId(0), t_issued: 0 };
        let idle = [
            IdleVehicle { vehicle: VehicleId(9), node: NodeId(1), idle_since: 0 },
            IdleVehicle { vehicle: VehicleId(4), node: NodeId(5), idle_since: 0 },
        ];
        assert_eq!(allocate_vehicle(&call, &idle, &FleetPolicy::default(), dist_table), Some(VehicleId(4)));
    }

    #[test]
    fn neighborhood_limits_allocation() {
        let call = Call { station: NodeId(0), group: GroupId(0), t_issued: 0 };
        let idle = [IdleVehicle { vehicle: VehicleId(1), node: NodeId(5), idle_since: 0 }];
        let policy = FleetPolicy { neighborhood_m: Some(300.0), ..FleetPolicy::default() };
        assert_eq!(allocate_vehicle(&call, &idle, &policy, dist_table), None);
    }

    fn view(station: u32, queue_len: u32, inbound: u32, idle: u32) -> StationView {
        StationView { station: NodeId(station), queue_len, inbound, idle }
    }

    #[test]
    fn return_to_capacitor_always_leaves() {
        let policy = FleetPolicy { empty_rule: EmptyRule::ReturnToCapacitor, ..FleetPolicy::default() };
        let act = on_vehicle_released(NodeId(1), &policy, &[view(1, 0, 0, 0)], Some(NodeId(9)));
        assert_eq!(act, ReleaseAction::EmptyTripTo(NodeId(9)));
    }

    #[test]
    fn stay_below_cap() {
        let policy = FleetPolicy { stay_cap: 2, ..FleetPolicy::default() };
        let act = on_vehicle_released(NodeId(1), &policy, &[view(1, 0, 0, 1)], Some(NodeId(9)));
        assert_eq!(act, ReleaseAction::Stay);
        let act = on_vehicle_released(NodeId(1), &policy, &[view(1, 0, 0, 2)], Some(NodeId(9)));
        assert_eq!(act, ReleaseAction::EmptyTripTo(NodeId(9)));
    }

    #[test]
    fn rebalance_toward_largest_deficit() {
        let policy = FleetPolicy {
            empty_rule: EmptyRule::ThresholdRebalance,
            rebalance_threshold: 2,
            ..FleetPolicy::default()
        };
        // X = station 4: 5 waiting, 1 inbound, deficit 4 > 2
        let views = [view(1, 0, 0, 0), view(4, 5, 1, 0), view(6, 3, 0, 0)];
        assert_eq!(
            on_vehicle_released(NodeId(1), &policy, &views, Some(NodeId(9))),
            ReleaseAction::EmptyTripTo(NodeId(4))
        );
        let calm = [view(1, 0, 0, 0), view(4, 2, 0, 0)];
        assert_eq!(on_vehicle_released(NodeId(1), &policy, &calm, Some(NodeId(9))), ReleaseAction::Stay);
    }

    #[test]
    fn eviction_picks_longest_idle() {
        let occ = [
            BerthOccupant { vehicle: VehicleId(3), idle_since: Some(50) },
            BerthOccupant { vehicle: VehicleId(1), idle_since: Some(20) },
            BerthOccupant { vehicle: VehicleId(2), idle_since: None },
        ];
        assert_eq!(evict_for_arrival(true, &occ), Some(VehicleId(1)));
        assert_eq!(evict_for_arrival(false, &occ), None);
        let busy = [BerthOccupant { vehicle: VehicleId(2), idle_since: None }];
        assert_eq!(evict_for_arrival(true, &busy), None);
    }
}
