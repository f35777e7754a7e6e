//! Sector-based kinematics.
//!
//! Between two sector boundaries a vehicle follows a piecewise-constant
//! acceleration profile: accelerate at `a_max`, cruise, brake at `b_max`.
//! State is exact at boundaries, which is where every decision is taken.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::network::SegmentId;
use crate::VehicleId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleSpec {
    pub capacity: u32,
    pub v_max: f64,
    pub a_max: f64,
    pub b_max: f64,
    pub b_emerg: f64,
    pub s_static: f64,
}

impl Default for VehicleSpec {
    fn default() -> Self {
        VehicleSpec {
            capacity: 4,
            v_max: 10.0,
            a_max: 1.25,
            b_max: 2.5,
            b_emerg: 5.0,
            s_static: 10.0,
        }
    }
}

impl VehicleSpec {
    pub fn check(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.capacity < 1 {
            errs.push("vehicle capacity must be at least 1".to_string());
        }
        for (name, x) in [
            ("v_max", self.v_max),
            ("a_max", self.a_max),
            ("b_max", self.b_max),
            ("b_emerg", self.b_emerg),
            ("s_static", self.s_static),
        ] {
            if !(x > 0.0) {
                errs.push(format!("vehicle {name} must be positive"));
            }
        }
        if self.b_emerg < self.b_max {
            errs.push("b_emerg must be at least b_max".to_string());
        }
        errs
    }

    pub fn braking_distance(&self, v: f64) -> f64 {
        v * v / (2.0 * self.b_max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepingRule {
    /// Stop before the leader's current position.
    Careful,
    /// Stop `s_static` behind the leader's stopping point, both braking at once.
    Optimal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeRule {
    /// Earliest projected arrival at the merge point goes first.
    FirstArrival,
    /// The incoming branch with the lower segment id always goes first.
    FixedPriority,
}

/// Highest speed from which service braking stops within `gap`.
pub fn max_speed_careful(gap: f64, b: f64) -> f64 {
    (2.0 * b * gap.max(0.0)).sqrt()
}

/// The follower is closer than the static separation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeparationBreach {
    pub gap: f64,
    pub s_static: f64,
}

/// Highest follower speed such that, with both vehicles braking at `b` from
/// now on, the follower halts at least `s_static` behind the leader.
pub fn max_speed_optimal(gap: f64, v_lead: f64, s_static: f64, b: f64) -> Result<f64, SeparationBreach> {
    if gap < s_static {
        return Err(SeparationBreach { gap, s_static });
    }
    Ok((v_lead * v_lead + 2.0 * b * (gap - s_static)).sqrt())
}

/// Point where a vehicle at `x` moving at `v` halts under braking `b`.
pub fn stop_point(x: f64, v: f64, b: f64) -> f64 {
    x + v * v / (2.0 * b)
}

/// Fixed profile over one sector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SectorPlan {
    pub length: f64,
    pub v0: f64,
    pub v_peak: f64,
    pub v_exit: f64,
    pub accel: f64,
    pub decel: f64,
    pub t_acc: f64,
    pub t_cruise: f64,
    pub t_dec: f64,
}

impl SectorPlan {
    pub fn duration(&self) -> f64 {
        self.t_acc + self.t_cruise + self.t_dec
    }

    /// Duration rounded up to whole microseconds.
    pub fn duration_us(&self) -> u64 {
        (self.duration() * 1e6 - 1e-6).ceil().max(0.0) as u64
    }

    /// (distance from sector start, speed) after `tau` seconds.
    pub fn state_at(&self, tau: f64) -> (f64, f64) {
        if tau <= 0.0 {
            return (0.0, self.v0);
        }
        let mut x = 0.0;
        let mut t = tau;
        if t <= self.t_acc {
            return (self.v0 * t + 0.5 * self.accel * t * t, self.v0 + self.accel * t);
        }
        x += self.v0 * self.t_acc + 0.5 * self.accel * self.t_acc * self.t_acc;
        t -= self.t_acc;
        if t <= self.t_cruise {
            return (x + self.v_peak * t, self.v_peak);
        }
        x += self.v_peak * self.t_cruise;
        t -= self.t_cruise;
        if t < self.t_dec {
            let v = (self.v_peak - self.decel * t).max(0.0);
            return ((x + self.v_peak * t - 0.5 * self.decel * t * t).min(self.length), v);
        }
        (self.length, self.v_exit)
    }
}

/// Time-minimal accelerate/cruise/brake profile over `length` from `v0` to
/// `v_exit`, never exceeding `v_cap`. Requires the exit speed to be reachable.
pub fn bang_bang(length: f64, v0: f64, v_exit: f64, v_cap: f64, a: f64, b: f64) -> SectorPlan {
    let peak_sq = (2.0 * a * b * length + b * v0 * v0 + a * v_exit * v_exit) / (a + b);
    let v_peak = peak_sq.sqrt().min(v_cap).max(v0).max(v_exit);
    let t_acc = ((v_peak - v0) / a).max(0.0);
    let t_dec = ((v_peak - v_exit) / b).max(0.0);
    let d_acc = (v_peak * v_peak - v0 * v0) / (2.0 * a);
    let d_dec = (v_peak * v_peak - v_exit * v_exit) / (2.0 * b);
    let cruise = (length - d_acc - d_dec).max(0.0);
    let t_cruise = if v_peak > 0.0 { cruise / v_peak } else { 0.0 };
    SectorPlan {
        length,
        v0,
        v_peak,
        v_exit,
        accel: a,
        decel: b,
        t_acc,
        t_cruise,
        t_dec,
    }
}

/// Inputs for one sector decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SectorInput {
    pub v0: f64,
    pub length: f64,
    /// Speed cap inside the sector (vehicle and segment limit).
    pub v_cap: f64,
    /// Upper bound on the exit speed implied by every downstream constraint
    /// (speed limits ahead, stop targets, the leader).
    pub exit_limit: f64,
    pub a: f64,
    pub b: f64,
    pub b_emerg: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SectorOutcome {
    pub plan: SectorPlan,
    /// Service braking could not meet `exit_limit`.
    pub emergency: bool,
}

/// Decide the profile over the next sector.
pub fn plan_sector_transit(inp: &SectorInput) -> SectorOutcome {
    let reach_max = (inp.v0 * inp.v0 + 2.0 * inp.a * inp.length).sqrt();
    let reach_min_sq = inp.v0 * inp.v0 - 2.0 * inp.b * inp.length;
    let target = inp.exit_limit.min(inp.v_cap).min(reach_max).max(0.0);
    if reach_min_sq <= target * target + 1e-9 {
        let v_exit = target.max(reach_min_sq.max(0.0).sqrt());
        return SectorOutcome {
            plan: bang_bang(inp.length, inp.v0, v_exit, inp.v_cap.max(inp.v0), inp.a, inp.b),
            emergency: false,
        };
    }
    // brake harder than service braking to meet the limit at the sector end
    let needed = (inp.v0 * inp.v0 - target * target) / (2.0 * inp.length);
    let decel = needed;
    let t_dec = (inp.v0 - target) / decel;
    SectorOutcome {
        plan: SectorPlan {
            length: inp.length,
            v0: inp.v0,
            v_peak: inp.v0,
            v_exit: target,
            accel: inp.a,
            decel,
            t_acc: 0.0,
            t_cruise: 0.0,
            t_dec,
        },
        emergency: true,
    }
}

/// Minimum rest-to-rest time over consecutive stretches `(length, v_limit)`
/// with no interference.
pub fn min_travel_time(stretches: &[(f64, f64)], v_max: f64, a: f64, b: f64) -> f64 {
    let n = stretches.len();
    if n == 0 {
        return 0.0;
    }
    let cap = |k: usize| stretches[k].1.min(v_max);
    // boundary speeds: forward acceleration pass, then backward braking pass
    let mut v = vec![0.0f64; n + 1];
    for k in 1..n {
        v[k] = cap(k - 1).min(cap(k));
    }
    for k in 1..=n {
        let reach = (v[k - 1] * v[k - 1] + 2.0 * a * stretches[k - 1].0).sqrt();
        v[k] = v[k].min(reach);
    }
    v[n] = 0.0;
    for k in (0..n).rev() {
        let reach = (v[k + 1] * v[k + 1] + 2.0 * b * stretches[k].0).sqrt();
        v[k] = v[k].min(reach);
    }
    (0..n)
        .map(|k| bang_bang(stretches[k].0, v[k], v[k + 1], cap(k), a, b).duration())
        .sum()
}

/// Time to cover `dist` from `v0`, accelerating up to `v_cap`, never braking.
pub fn free_run_time(dist: f64, v0: f64, v_cap: f64, a: f64) -> f64 {
    if dist <= 0.0 {
        return 0.0;
    }
    let v_cap = v_cap.max(v0);
    let d_acc = (v_cap * v_cap - v0 * v0) / (2.0 * a);
    if dist <= d_acc {
        ((v0 * v0 + 2.0 * a * dist).sqrt() - v0) / a
    } else {
        (v_cap - v0) / a + (dist - d_acc) / v_cap
    }
}

/// A vehicle asking to pass a merge point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MergeContender {
    pub vehicle: VehicleId,
    /// Branch the vehicle arrives on; station exits use the station's own
    /// outgoing segment.
    pub branch: SegmentId,
    /// Seconds until the vehicle would reach the merge point unhindered.
    pub projected_arrival: f64,
}

/// Passage order at a merge point.
pub fn resolve_merge(contenders: &[MergeContender], rule: MergeRule) -> Vec<VehicleId> {
    let mut order: Vec<&MergeContender> = contenders.iter().collect();
    let by_arrival = |x: &&MergeContender, y: &&MergeContender| -> Ordering {
        x.projected_arrival
            .total_cmp(&y.projected_arrival)
            .then(x.branch.cmp(&y.branch))
            .then(x.vehicle.cmp(&y.vehicle))
    };
    match rule {
        MergeRule::FirstArrival => order.sort_by(by_arrival),
        MergeRule::FixedPriority => order.sort_by(|x, y| x.branch.cmp(&y.branch).then(by_arrival(x, y))),
    }
    order.into_iter().map(|c| c.vehicle).collect()
}
