//! Event engine: pending-event buffer, simulated clock and the replication
//! loop.

mod depot;
mod drive;
pub mod event;
mod sim;

pub use event::{EventBuffer, EventKind, Timestamp, TraceEvent};
pub use sim::{metrics_config, run_replication, ReplicationConfig, RunOutput};

#[cfg(test)]
mod tests;
