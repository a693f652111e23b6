pub mod attack;
pub mod config;
pub mod control;
pub mod detectors;
pub mod driving;
pub mod dynamics;
pub mod fixtures;
pub mod geometry;
pub mod metrics;
pub mod scenario;
pub mod stats;
