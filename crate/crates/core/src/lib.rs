//! Control plane for governed agent fleets: registry, policy mediation,
//! shared memory, lifecycle, hash-chained audit, and governance metrics.

pub mod audit;
pub mod clock;
pub mod config;
pub mod digest;
pub mod domain;
mod hexbytes;
pub mod ids;
pub mod lifecycle;
pub mod mediation;
pub mod memory;
pub mod policy;
pub mod registry;
pub mod events;
pub mod metrics;
pub mod plane;
pub mod state;

pub use plane::ControlPlane;
pub mod simulator;
