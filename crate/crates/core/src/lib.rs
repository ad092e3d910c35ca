//! Priority-based multi-level bandwidth adaptation for multi-class wireless
//! cells, a seeded discrete-event simulator to evaluate it, and analytical
//! loss-system oracles to validate the simulator.

pub mod config;
pub mod engine;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod sweep;
pub mod validate;
