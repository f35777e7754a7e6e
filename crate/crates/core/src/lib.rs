//! Discrete-event microsimulation of personal rapid transit networks.
//!
//! The crate is organised around a single-threaded event kernel
//! ([`kernel`]) that drives vehicles over a sectorized guideway
//! ([`network`]), serves passenger demand ([`demand`]) at stations
//! ([`stations`]) and records everything needed for [`metrics`].
//! [`experiments`] fans replications out over a worker pool.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod bench;
pub mod demand;
pub mod error;
pub mod experiments;
pub mod fleet;
pub mod kernel;
pub mod metrics;
pub mod motion;
pub mod network;
pub mod routing;
pub mod scenario;
pub mod stations;
pub mod trace;

pub use error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}
