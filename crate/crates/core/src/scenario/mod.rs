//! Closed-loop mission assembly, Monte Carlo experiments and CSV reports.

mod calibration;
mod config;
mod montecarlo;
mod nodes;
mod record;

use thiserror::Error;

use crate::detectors::DetectorError;
use crate::estimation::EstimationError;

pub use calibration::{
    calibrate, calibrate_to_sidecar, collect_nominal, DetectorKind, DetectorSetup,
    DetectorThresholds, NominalTraces, RecurrentEntry,
};
pub use config::{
    CameraTransport, DetectorSettings, InitialConditions, MarkerConfig, ScenarioConfig,
};
pub use montecarlo::{monte_carlo, DetectorSummary, MonteCarloReport, RunSummary};
pub use nodes::{
    build_attack_engine, build_filter, run_scenario, run_with_engine, DetectorBank, FlightComputer,
    FlightLog, Plant, PlantLog,
};
pub use record::{rows_from_csv, RunRecord, StepRow, COLUMNS};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("simulation diverged at step {step}: {reason}")]
    Divergence { step: u64, reason: String },
    #[error("estimator failed at step {step}: {source}")]
    Estimation { step: u64, source: EstimationError },
    #[error("detector: {0}")]
    Detector(#[from] DetectorError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed data: {0}")]
    Format(String),
    #[error("telemetry: {0}")]
    Telemetry(String),
    #[error("run {index} (seed {seed}): {source}")]
    Run {
        index: usize,
        seed: u64,
        source: Box<SimError>,
    },
}

impl SimError {
    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        SimError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// Process exit status: 1 configuration, 2 divergence, 3 input/output.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) | SimError::Detector(_) => 1,
            SimError::Divergence { .. } | SimError::Estimation { .. } => 2,
            SimError::Io { .. } | SimError::Format(_) | SimError::Telemetry(_) => 3,
            SimError::Run { source, .. } => source.exit_code(),
        }
    }
}
