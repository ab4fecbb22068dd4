//! Discrete-event simulation of a regional ambulance emergency system:
//! instance model, randomness, travel-time calibration, demand generation,
//! the mission engine, and replication statistics.

pub mod calibration;
pub mod demand;
pub mod engine;
pub mod fixtures;
pub mod kpi;
pub mod model;
pub mod replication;
pub mod stochastic;
pub mod synth;

pub use model::{
    load_instance, save_instance, InstanceError, PointIdx, PointKind, SeverityTag, SimulationInstance, UrgencyClass,
};
