use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::control::{GroundVehicle, MissionKind, MissionThresholds, PidGains};
use crate::detectors::RecurrentConfig;
use crate::dynamics::VehicleParams;
use crate::perception::CameraModel;
use crate::sensing::{MeasurementKind, ProcessNoiseParams, SensorNoiseParams};
use crate::tracker::TrackerParams;

use super::SimError;

/// How camera data travels from the plant to the flight computer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraTransport {
    /// Detector output only; equivalent to rendering and detecting a frame.
    #[default]
    Observation,
    /// Full rendered frames.
    Frame,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerConfig {
    /// Physical side length, m.
    pub side: f64,
    /// Standard deviation of the image-plane noise added to the marker
    /// centre and side before rasterisation, px.
    pub pixel_noise: f64,
}

impl Default for MarkerConfig {
    fn default() -> Self {
        Self {
            side: 0.5,
            pixel_noise: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConditions {
    /// Take-off position of the vehicle.
    pub position: [f64; 3],
    /// Prior standard deviation on every state component of the filter.
    pub prior_std: f64,
}

impl Default for InitialConditions {
    fn default() -> Self {
        Self {
            position: [0.0, 0.0, 0.0],
            prior_std: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSettings {
    pub p_fa: f64,
    /// Stealthiness margin on `p_td - p_fa`.
    pub epsilon: f64,
    /// Allowance subtracted from the per-step excess of the chi-square
    /// score over its degrees of freedom.
    pub cusum_drift: f64,
    /// Nominal runs simulated by calibration.
    pub calibration_runs: usize,
    /// Seed offset of the calibration runs, kept apart from experiment seeds.
    pub calibration_seed: u64,
    pub recurrent: RecurrentConfig,
    /// Sidecar with calibrated thresholds. Relative paths resolve against
    /// the configuration file. Defaults to `<config stem>.thresholds.toml`.
    pub thresholds_file: Option<PathBuf>,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self {
            p_fa: 0.01,
            epsilon: 0.05,
            cusum_drift: 3.0,
            calibration_runs: 40,
            calibration_seed: 1_000_000,
            recurrent: RecurrentConfig::default(),
            thresholds_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mission: MissionKind,
    pub seed: u64,
    /// Control period, s.
    pub dt: f64,
    /// Simulated time limit, s.
    pub duration: f64,
    pub measurement: MeasurementKind,
    pub camera_transport: CameraTransport,
    pub vehicle: VehicleParams,
    pub process_noise: ProcessNoiseParams,
    pub sensor_noise: SensorNoiseParams,
    pub camera: CameraModel,
    pub marker: MarkerConfig,
    pub tracker: TrackerParams,
    pub thresholds: MissionThresholds,
    pub gains: PidGains,
    pub ground_vehicle: GroundVehicle,
    pub initial: InitialConditions,
    pub attack: AttackConfig,
    pub detectors: DetectorSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            mission: MissionKind::Gvt,
            seed: 1,
            dt: 0.02,
            duration: 25.0,
            measurement: MeasurementKind::FullState,
            camera_transport: CameraTransport::Observation,
            vehicle: VehicleParams::default(),
            process_noise: ProcessNoiseParams::default(),
            sensor_noise: SensorNoiseParams::default(),
            camera: CameraModel::default(),
            marker: MarkerConfig::default(),
            tracker: TrackerParams::default(),
            thresholds: MissionThresholds::default(),
            gains: PidGains::default(),
            ground_vehicle: GroundVehicle::default(),
            initial: InitialConditions::default(),
            attack: AttackConfig::default(),
            detectors: DetectorSettings::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: Self = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            SimError::Config(m) => SimError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let check = |r: Result<(), String>| r.map_err(SimError::Config);
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SimError::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(SimError::Config(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        check(self.vehicle.validate())?;
        check(self.process_noise.validate())?;
        check(self.sensor_noise.validate())?;
        check(self.camera.validate())?;
        if !(self.marker.side.is_finite() && self.marker.side > 0.0) {
            return Err(SimError::Config("marker.side must be positive".into()));
        }
        if !(self.marker.pixel_noise.is_finite() && self.marker.pixel_noise >= 0.0) {
            return Err(SimError::Config(
                "marker.pixel_noise must be non-negative".into(),
            ));
        }
        if !(self.initial.prior_std.is_finite() && self.initial.prior_std > 0.0) {
            return Err(SimError::Config(
                "initial.prior_std must be positive".into(),
            ));
        }
        check(self.tracker.validate())?;
        check(self.thresholds.validate())?;
        check(self.gains.validate())?;
        check(self.ground_vehicle.validate())?;
        check(self.attack.validate())?;
        let d = &self.detectors;
        if !(d.p_fa > 0.0 && d.p_fa < 1.0) {
            return Err(SimError::Config(format!(
                "detectors.p_fa must lie in (0, 1), got {}",
                d.p_fa
            )));
        }
        if !(d.epsilon.is_finite() && d.epsilon >= 0.0) {
            return Err(SimError::Config(
                "detectors.epsilon must be non-negative".into(),
            ));
        }
        if !(d.cusum_drift.is_finite() && d.cusum_drift >= 0.0) {
            return Err(SimError::Config(
                "detectors.cusum_drift must be non-negative".into(),
            ));
        }
        if d.calibration_runs < 2 {
            return Err(SimError::Config(
                "detectors.calibration_runs must be at least 2".into(),
            ));
        }
        check(d.recurrent.validate())?;
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        (self.duration / self.dt).round() as u64
    }

    /// Where the thresholds sidecar of a configuration stored at `config_path` lives.
    pub fn thresholds_path(&self, config_path: &Path) -> PathBuf {
        let dir = config_path.parent().unwrap_or(Path::new(""));
        match &self.detectors.thresholds_file {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => dir.join(p),
            None => {
                let stem = config_path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("scenario");
                dir.join(format!("{stem}.thresholds.toml"))
            }
        }
    }

    /// Copy with the attack switched off; the nominal twin of an attacked run.
    pub fn nominal(&self) -> Self {
        let mut c = self.clone();
        c.attack.enabled = false;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ScenarioConfig::default();
        c.validate().unwrap();
        let back = ScenarioConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_takes_defaults() {
        let c =
            ScenarioConfig::from_toml("mission = \"vtol\"\nseed = 9\n[attack]\nenabled = true\n")
                .unwrap();
        assert_eq!(c.mission, MissionKind::Vtol);
        assert_eq!(c.seed, 9);
        assert!(c.attack.enabled);
        assert_eq!(c.dt, 0.02);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ScenarioConfig::from_toml("duration = 0.0").is_err());
        assert!(ScenarioConfig::from_toml("[detectors]\np_fa = 1.0").is_err());
        assert!(ScenarioConfig::from_toml("unknown_key = 3").is_err());
        assert!(ScenarioConfig::from_toml("[attack]\nalpha = -1.0").is_err());
    }

    #[test]
    fn sidecar_path_follows_config() {
        let c = ScenarioConfig::default();
        assert_eq!(
            c.thresholds_path(Path::new("/a/b/gvt.toml")),
            PathBuf::from("/a/b/gvt.thresholds.toml")
        );
        let mut c2 = c.clone();
        c2.detectors.thresholds_file = Some("t.toml".into());
        assert_eq!(
            c2.thresholds_path(Path::new("/a/gvt.toml")),
            PathBuf::from("/a/t.toml")
        );
    }
}
