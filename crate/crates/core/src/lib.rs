//! Content replication in edge-assisted CDNs.
//!
//! A data center is backed by `m` small servers, each caching `d` of the `n`
//! contents and serving one request at a time. A request that finds no idle
//! server holding its content is lost to the data center. This crate
//! provides:
//!
//! - [`model`]: instances, popularity models and replication profiles;
//! - [`meanfield`]: the per-content birth-death approximation and its fixed point;
//! - [`optimizer`]: optimized static replication and a greedy oracle;
//! - [`sim`]: an exact discrete-event simulator of the loss network;
//! - [`adaptive`]: loss-driven replica management, with virtual losses;
//! - [`harness`]: scenario files, presets and reports.

pub mod adaptive;
pub mod error;
pub mod harness;
pub mod meanfield;
pub mod model;
pub mod optimizer;
pub mod sim;

pub use error::{Error, Result};
pub use model::{Catalog, ClassSpec, ContentClass, ReplicationProfile, SystemParams};
