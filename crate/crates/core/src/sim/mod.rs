//! Discrete-event simulation of the loss network.

pub mod engine;
pub mod events;
pub mod graph;
pub mod indexed_set;
pub mod metrics;

pub use engine::{run, SimConfig, Simulation};
pub use events::{EventKind, EventQueue};
pub use graph::CacheGraph;
pub use indexed_set::IndexedSet;
pub use metrics::{SimMetrics, SimSummary, Snapshot};
