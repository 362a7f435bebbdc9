//! Closed-loop quadcopter simulation with vision-based missions, residual
//! anomaly detectors, and a consistent false-data-injection attack engine.

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod control;
pub mod detectors;
pub mod dynamics;
pub mod estimation;
pub mod frames;
pub mod perception;
pub mod scenario;
pub mod sensing;
pub mod state;
pub mod telemetry;
pub mod tracker;

pub use dynamics::{RotorCommand, VehicleParams};
pub use frames::EulerAngles;
pub use state::State12;
