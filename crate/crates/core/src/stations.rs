//! Station and capacitor micro-structure: passenger queue, berths, input and
//! output buffers.
//!
//! Geometry inside a station is logical: slots plus a fixed traverse time per
//! spur move. In-line berths are numbered from the downstream end, so berth 0
//! is the first one a departing vehicle passes last and an entering vehicle
//! reaches last.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::demand::GroupId;
use crate::network::NodeId;
use crate::VehicleId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StationLayout {
    InLine,
    StubBerths,
}

fn default_spur_len() -> f64 {
    15.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSpec {
    pub layout: StationLayout,
    pub berths: u32,
    #[serde(default)]
    pub in_buffer: u32,
    #[serde(default)]
    pub out_buffer: u32,
    /// Length of one internal move (approach spur to berth, berth to exit).
    #[serde(default = "default_spur_len")]
    pub spur_len_m: f64,
}

impl StationSpec {
    pub fn check(&self) -> Result<(), String> {
        if self.berths == 0 {
            return Err("berths must be at least 1".into());
        }
        if !(self.spur_len_m > 0.0) {
            return Err("spur_len_m must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitorSpec {
    pub capacity: u32,
    #[serde(default)]
    pub initial_vehicles: u32,
    #[serde(default = "default_spur_len")]
    pub spur_len_m: f64,
}

impl CapacitorSpec {
    pub fn check(&self) -> Result<(), String> {
        if self.capacity == 0 {
            return Err("capacity must be at least 1".into());
        }
        if self.initial_vehicles > self.capacity {
            return Err(format!(
                "initial_vehicles {} exceeds capacity {}",
                self.initial_vehicles, self.capacity
            ));
        }
        if !(self.spur_len_m > 0.0) {
            return Err("spur_len_m must be positive".into());
        }
        Ok(())
    }
}

/// Where an arriving vehicle goes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    Berth(usize),
    InBuffer,
    /// Nothing free: the vehicle waits on the approach track.
    Hold,
}

/// Dynamic state of a station or capacitor. A capacitor is a station with
/// stub slots, no buffers and no passenger queue.
#[derive(Clone, Debug)]
pub struct StationState {
    pub node: NodeId,
    pub layout: StationLayout,
    pub is_capacitor: bool,
    pub spur_len_m: f64,
    pub queue: VecDeque<GroupId>,
    berths: Vec<Option<VehicleId>>,
    in_buffer: VecDeque<VehicleId>,
    in_cap: usize,
    out_buffer: VecDeque<VehicleId>,
    out_cap: usize,
}

impl StationState {
    pub fn station(node: NodeId, spec: &StationSpec) -> Self {
        StationState {
            node,
            layout: spec.layout,
            is_capacitor: false,
            spur_len_m: spec.spur_len_m,
            queue: VecDeque::new(),
            berths: vec![None; spec.berths as usize],
            in_buffer: VecDeque::new(),
            in_cap: spec.in_buffer as usize,
            out_buffer: VecDeque::new(),
            out_cap: spec.out_buffer as usize,
        }
    }

    pub fn capacitor(node: NodeId, spec: &CapacitorSpec) -> Self {
        StationState {
            node,
            layout: StationLayout::StubBerths,
            is_capacitor: true,
            spur_len_m: spec.spur_len_m,
            queue: VecDeque::new(),
            berths: vec![None; spec.capacity as usize],
            in_buffer: VecDeque::new(),
            in_cap: 0,
            out_buffer: VecDeque::new(),
            out_cap: 0,
        }
    }

    pub fn berth_count(&self) -> usize {
        self.berths.len()
    }

    pub fn berth(&self, i: usize) -> Option<VehicleId> {
        self.berths[i]
    }

    pub fn berth_of(&self, v: VehicleId) -> Option<usize> {
        self.berths.iter().position(|&b| b == Some(v))
    }

    pub fn occupied_berths(&self) -> usize {
        self.berths.iter().filter(|b| b.is_some()).count()
    }

    pub fn berths_full(&self) -> bool {
        self.berths.iter().all(Option::is_some)
    }

    pub fn in_buffer(&self) -> &VecDeque<VehicleId> {
        &self.in_buffer
    }

    pub fn out_buffer(&self) -> &VecDeque<VehicleId> {
        &self.out_buffer
    }

    pub fn has_out_buffer(&self) -> bool {
        self.out_cap > 0
    }

    pub fn out_buffer_has_room(&self) -> bool {
        self.out_buffer.len() < self.out_cap
    }

    /// Vehicles anywhere inside the station (berths and buffers).
    pub fn vehicles_present(&self) -> usize {
        self.occupied_berths() + self.in_buffer.len() + self.out_buffer.len()
    }

    /// Berth a vehicle entering now would take, ignoring the in-buffer.
    fn free_berth(&self) -> Option<usize> {
        match self.layout {
            StationLayout::StubBerths => self.berths.iter().position(Option::is_none),
            // must pass every berth upstream of the target, all of which have
            // higher indices
            StationLayout::InLine => {
                let mut best = None;
                for i in (0..self.berths.len()).rev() {
                    if self.berths[i].is_some() {
                        break;
                    }
                    best = Some(i);
                }
                best
            }
        }
    }

    /// Decide where vehicle `v` goes on arrival and reserve that place.
    /// Vehicles already waiting in the in-buffer keep priority for berths.
    pub fn admit_vehicle(&mut self, v: VehicleId) -> Admission {
        if self.in_buffer.is_empty() {
            if let Some(i) = self.free_berth() {
                self.berths[i] = Some(v);
                return Admission::Berth(i);
            }
        }
        if self.in_buffer.len() < self.in_cap {
            self.in_buffer.push_back(v);
            return Admission::InBuffer;
        }
        Admission::Hold
    }

    /// Whether an arrival would currently be admitted somewhere.
    pub fn can_admit(&self) -> bool {
        (self.in_buffer.is_empty() && self.free_berth().is_some()) || self.in_buffer.len() < self.in_cap
    }

    /// Move the in-buffer head into a berth if one is reachable.
    pub fn promote_from_in_buffer(&mut self) -> Option<(VehicleId, usize)> {
        let &head = self.in_buffer.front()?;
        let i = self.free_berth()?;
        self.in_buffer.pop_front();
        self.berths[i] = Some(head);
        Some((head, i))
    }

    /// A vehicle at berth `i` may pull out only when nothing blocks its way
    /// to the exit.
    pub fn can_leave_berth(&self, i: usize) -> bool {
        match self.layout {
            StationLayout::StubBerths => true,
            StationLayout::InLine => self.berths[..i].iter().all(Option::is_none),
        }
    }

    pub fn free_berth_of(&mut self, v: VehicleId) -> Option<usize> {
        let i = self.berth_of(v)?;
        self.berths[i] = None;
        Some(i)
    }

    pub fn enter_out_buffer(&mut self, v: VehicleId) {
        debug_assert!(self.out_buffer_has_room());
        self.out_buffer.push_back(v);
    }

    pub fn leave_out_buffer(&mut self, v: VehicleId) -> bool {
        if self.out_buffer.front() == Some(&v) {
            self.out_buffer.pop_front();
            true
        } else {
            false
        }
    }

    /// Through traffic on an in-line station must pass every berth.
    pub fn through_line_clear(&self) -> bool {
        match self.layout {
            StationLayout::StubBerths => true,
            StationLayout::InLine => self.occupied_berths() == 0 && self.out_buffer.is_empty(),
        }
    }

    pub fn enqueue_group(&mut self, g: GroupId) {
        self.queue.push_back(g);
    }

    pub fn remove_group(&mut self, g: GroupId) -> bool {
        if let Some(pos) = self.queue.iter().position(|&x| x == g) {
            self.queue.remove(pos);
            true
        } else {
            false
        }
    }

    /// Place a vehicle directly into a slot at start-up.
    pub fn place_initial(&mut self, v: VehicleId) -> Option<usize> {
        let i = self.berths.iter().position(Option::is_none)?;
        self.berths[i] = Some(v);
        Some(i)
    }
}
