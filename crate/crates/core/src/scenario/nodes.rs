use std::sync::Arc;

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::attack::{AttackEngine, CameraPayload, EngineSetup};
use crate::control::{
    fsm_step, ground_vehicle_step, mission_setpoint, CascadeController, GroundVehicle, MissionKind,
    MissionPhase, MissionThresholds,
};
use crate::detectors::{Cusum, DetectorVerdict, RecurrentScorer};
use crate::dynamics::{hover_state, step, QuadcopterModel, RotorCommand, VehicleParams};
use crate::estimation::{
    measurement_covariance, process_covariance, BeliefState, Ekf, ResidualRecord,
};
use crate::perception::{
    estimate_relative_position, ideal_observation, marker_in_camera, rasterize, render_marker,
    CameraModel, MarkerObservation,
};
use crate::sensing::{
    measure, Measurement, MeasurementModel, ProcessNoiseParams, SensorNoiseParams,
};
use crate::state::State12;
use crate::tracker::{marker_earth_measurement, MarkerTracker, TrackerParams};

use super::calibration::DetectorSetup;
use super::config::{CameraTransport, MarkerConfig, ScenarioConfig};
use super::record::{RunRecord, StepRow};
use super::SimError;

/// States beyond this norm count as diverged.
const DIVERGENCE_NORM: f64 = 1e6;

/// Ground truth of one step as seen by the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantLog {
    pub step: u64,
    pub time: f64,
    pub state: State12,
    pub marker: Vector3<f64>,
    pub p_cam: Vector3<f64>,
}

/// Simulated vehicle, sensors, camera and ground target.
#[derive(Debug)]
pub struct Plant {
    params: VehicleParams,
    dt: f64,
    model: Arc<dyn MeasurementModel>,
    sensor_noise: SensorNoiseParams,
    process_noise: ProcessNoiseParams,
    camera: CameraModel,
    marker: MarkerConfig,
    transport: CameraTransport,
    state: State12,
    target: GroundVehicle,
    step: u64,
    rng_process: ChaCha8Rng,
    rng_sensor: ChaCha8Rng,
    rng_pixel: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Plant {
    pub fn new(cfg: &ScenarioConfig, seed: u64) -> Self {
        Self {
            params: cfg.vehicle,
            dt: cfg.dt,
            model: cfg.measurement.model(),
            sensor_noise: cfg.sensor_noise,
            process_noise: cfg.process_noise,
            camera: cfg.camera,
            marker: cfg.marker,
            transport: cfg.camera_transport,
            state: hover_state(Vector3::from(cfg.initial.position)),
            target: cfg.ground_vehicle,
            step: 0,
            rng_process: stream(seed, 1),
            rng_sensor: stream(seed, 2),
            rng_pixel: stream(seed, 3),
        }
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn state(&self) -> &State12 {
        &self.state
    }

    pub fn marker_position(&self) -> Vector3<f64> {
        self.target.position()
    }

    /// Samples the sensors and the camera at the current step.
    pub fn sense(&mut self) -> (Measurement, CameraPayload, PlantLog) {
        let y = measure(
            &self.state,
            self.step,
            self.model.as_ref(),
            &self.sensor_noise,
            &mut self.rng_sensor,
        );
        let marker = self.marker_position();
        let p_cam = marker_in_camera(&self.state, &marker, &self.camera);
        let ideal = ideal_observation(&p_cam, self.marker.side, &self.camera);
        let n: [f64; 3] =
            std::array::from_fn(|_| rand::Rng::sample(&mut self.rng_pixel, StandardNormal));
        let sigma = self.marker.pixel_noise;
        let noisy = if ideal.visible {
            MarkerObservation::new(
                ideal.center + Vector2::new(n[0], n[1]) * sigma,
                ideal.side + n[2] * sigma,
            )
        } else {
            ideal
        };
        let payload = match self.transport {
            CameraTransport::Observation => {
                CameraPayload::Observation(rasterize(&noisy, &self.camera))
            }
            CameraTransport::Frame => {
                CameraPayload::Frame(render_marker(&noisy, &self.camera, self.step))
            }
        };
        let log = PlantLog {
            step: self.step,
            time: self.step as f64 * self.dt,
            state: self.state,
            marker,
            p_cam,
        };
        (y, payload, log)
    }

    /// Applies `u` over one period, with process noise and ground contact.
    pub fn actuate(&mut self, u: &RotorCommand) -> Result<(), SimError> {
        let w = self.process_noise.sample(&mut self.rng_process);
        let mut next =
            step(&self.state, u, self.dt, &w, &self.params).map_err(|e| SimError::Divergence {
                step: self.step,
                reason: e.to_string(),
            })?;
        if next[2] < 0.0 {
            next[2] = 0.0;
            next[5] = next[5].max(0.0);
        }
        if !next.is_finite() || next.norm() > DIVERGENCE_NORM {
            return Err(SimError::Divergence {
                step: self.step,
                reason: "state norm overflow".into(),
            });
        }
        self.state = next;
        self.target = ground_vehicle_step(&self.target, self.dt).0;
        self.step += 1;
        Ok(())
    }
}

/// The flight computer's own filter, shared by the attacker's replica.
pub fn build_filter(cfg: &ScenarioConfig) -> Ekf {
    let model = cfg.measurement.model();
    let r = measurement_covariance(model.as_ref(), &cfg.sensor_noise);
    let prior = BeliefState::new(
        hover_state(Vector3::from(cfg.initial.position)),
        crate::dynamics::Matrix12::identity() * cfg.initial.prior_std.powi(2),
    );
    Ekf::new(
        prior,
        Arc::new(QuadcopterModel::new(cfg.vehicle)),
        model,
        process_covariance(&cfg.process_noise),
        r,
        cfg.dt,
    )
}

pub fn build_attack_engine(cfg: &ScenarioConfig) -> AttackEngine {
    let setup = EngineSetup {
        camera: cfg.camera,
        marker_side: cfg.marker.side,
        tracker: cfg.tracker,
        cruise_altitude: cfg.thresholds.cruise_altitude,
        altitude_tolerance: cfg.thresholds.altitude_tolerance,
    };
    AttackEngine::new(cfg.attack.clone(), setup, build_filter(cfg))
}

/// Detectors evaluated by the flight computer on every step.
#[derive(Debug, Clone)]
pub struct DetectorBank {
    setup: DetectorSetup,
    cusum: Option<Cusum>,
    recurrent: Option<RecurrentScorer>,
}

impl DetectorBank {
    pub fn new(setup: &DetectorSetup) -> Self {
        Self {
            setup: setup.clone(),
            cusum: setup.cusum.map(Cusum::new),
            recurrent: setup.recurrent.clone().map(RecurrentScorer::new),
        }
    }
}

/// What the flight computer computed on one step.
#[derive(Debug, Clone, PartialEq)]
pub struct FlightLog {
    pub step: u64,
    pub estimate: State12,
    pub phase: MissionPhase,
    /// Relative marker position recovered from the received camera data.
    pub p_cam_seen: Option<Vector3<f64>>,
    pub ekf_nis: f64,
    pub vision_nis: Option<f64>,
    pub chi2: DetectorVerdict,
    pub chi2_dof: usize,
    pub cusum: Option<DetectorVerdict>,
    pub recurrent: Option<DetectorVerdict>,
    /// Whitened filter residual followed by the whitened vision residual
    /// (zeros when there is none).
    pub features: Vec<f64>,
    pub command: RotorCommand,
    pub finished: bool,
}

/// Estimator, marker tracker, detectors, mission logic and controller.
#[derive(Debug)]
pub struct FlightComputer {
    mission: MissionKind,
    thresholds: MissionThresholds,
    camera: CameraModel,
    marker_side: f64,
    tracker_params: TrackerParams,
    ekf: Ekf,
    tracker: MarkerTracker,
    controller: CascadeController,
    phase: MissionPhase,
    hold_xy: Vector3<f64>,
    last_command: Option<RotorCommand>,
    detectors: DetectorBank,
}

impl FlightComputer {
    pub fn new(cfg: &ScenarioConfig, detectors: &DetectorSetup) -> Self {
        Self {
            mission: cfg.mission,
            thresholds: cfg.thresholds,
            camera: cfg.camera,
            marker_side: cfg.marker.side,
            tracker_params: cfg.tracker,
            ekf: build_filter(cfg),
            tracker: MarkerTracker::new(cfg.tracker, cfg.dt),
            controller: CascadeController::new(cfg.gains, cfg.vehicle, cfg.dt),
            phase: MissionPhase::Ascend,
            hold_xy: Vector3::from(cfg.initial.position),
            last_command: None,
            detectors: DetectorBank::new(detectors),
        }
    }

    pub fn phase(&self) -> MissionPhase {
        self.phase
    }

    pub fn estimate(&self) -> &State12 {
        self.ekf.mean()
    }

    fn score(
        &mut self,
        step: u64,
        ekf: &ResidualRecord,
        vision: Option<&ResidualRecord>,
    ) -> Result<FlightScores, SimError> {
        let ekf_nis = ekf.normalized();
        let vision_nis = vision.map(ResidualRecord::normalized);
        let score = ekf_nis + vision_nis.unwrap_or(0.0);
        let dof = ekf.dim() + vision.map_or(0, ResidualRecord::dim);
        let chi2 = self.detectors.setup.chi2.evaluate(step, score, dof)?;
        let cusum = self
            .detectors
            .cusum
            .as_mut()
            .map(|c| c.step(step, score, dof as f64));
        let mut features: Vec<f64> = ekf.whitened.iter().copied().collect();
        match vision {
            Some(v) => features.extend(v.whitened.iter()),
            None => features.extend([0.0; 3]),
        }
        let recurrent = match self.detectors.recurrent.as_mut() {
            // scored as silent until the window holds two samples
            Some(r) => Some(r.push(step, features.clone())?.unwrap_or(DetectorVerdict {
                step,
                alarm: false,
                score: f64::NAN,
            })),
            None => None,
        };
        Ok(FlightScores {
            ekf_nis,
            vision_nis,
            chi2,
            dof,
            cusum,
            recurrent,
            features,
        })
    }

    /// One control period: estimate, detect, decide the phase, command the rotors.
    pub fn process(
        &mut self,
        y: &Measurement,
        camera: &CameraPayload,
    ) -> Result<(RotorCommand, FlightLog), SimError> {
        let step = y.step;
        let est_err = |source| SimError::Estimation { step, source };
        let started = self.last_command.is_some();
        let ekf_record = self
            .ekf
            .advance(self.last_command.as_ref(), y)
            .map_err(est_err)?;
        if !self.ekf.mean().is_finite() {
            return Err(SimError::Divergence {
                step,
                reason: "state estimate is not finite".into(),
            });
        }
        if started {
            self.tracker.predict();
        }
        let obs = camera.observation();
        let mut seen = None;
        let mut vision_record = None;
        if obs.visible {
            if let Ok(m) = marker_earth_measurement(
                &self.ekf.belief,
                &obs,
                &self.camera,
                self.marker_side,
                &self.tracker_params,
            ) {
                vision_record = self.tracker.update(&m, step).map_err(est_err)?;
                seen = Some(m.position);
            }
        }
        let scores = self.score(step, &ekf_record, vision_record.as_ref())?;

        let estimate = *self.ekf.mean();
        let p_cam_seen = estimate_relative_position(&obs, &self.camera, self.marker_side).ok();
        self.phase = fsm_step(
            self.mission,
            self.phase,
            obs.visible,
            p_cam_seen.as_ref(),
            estimate[2],
            &self.thresholds,
        );
        let target = seen.or_else(|| self.tracker.position());
        let target_velocity = self.tracker.velocity();
        let sp = mission_setpoint(
            self.phase,
            &estimate,
            &self.hold_xy,
            target.as_ref(),
            target_velocity.as_ref(),
            &self.thresholds,
        );
        let command = self.controller.control(&estimate, &sp).command;
        self.last_command = Some(command);
        let finished =
            self.phase == MissionPhase::Land && estimate[2] <= self.thresholds.touchdown_altitude;
        let log = FlightLog {
            step,
            estimate,
            phase: self.phase,
            p_cam_seen,
            ekf_nis: scores.ekf_nis,
            vision_nis: scores.vision_nis,
            chi2: scores.chi2,
            chi2_dof: scores.dof,
            cusum: scores.cusum,
            recurrent: scores.recurrent,
            features: scores.features,
            command,
            finished,
        };
        Ok((command, log))
    }
}

struct FlightScores {
    ekf_nis: f64,
    vision_nis: Option<f64>,
    chi2: DetectorVerdict,
    dof: usize,
    cusum: Option<DetectorVerdict>,
    recurrent: Option<DetectorVerdict>,
    features: Vec<f64>,
}

/// Runs one mission with the attack engine the configuration asks for.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    seed: u64,
    detectors: &DetectorSetup,
) -> Result<RunRecord, SimError> {
    cfg.validate()?;
    let engine = cfg.attack.enabled.then(|| build_attack_engine(cfg));
    run_with_engine(cfg, seed, detectors, engine)
}

/// Runs one mission, optionally with an engine between the plant and the
/// flight computer.
pub fn run_with_engine(
    cfg: &ScenarioConfig,
    seed: u64,
    detectors: &DetectorSetup,
    mut engine: Option<AttackEngine>,
) -> Result<RunRecord, SimError> {
    let mut plant = Plant::new(cfg, seed);
    let mut fc = FlightComputer::new(cfg, detectors);
    let mut record = RunRecord::new(seed, cfg.mission);
    for _ in 0..cfg.steps() {
        let (y, camera, plant_log) = plant.sense();
        let step = y.step;
        let (y_out, camera_out) = match engine.as_mut() {
            Some(e) => e
                .intercept(&y, &camera)
                .map_err(|source| SimError::Estimation { step, source })?,
            None => (y, camera),
        };
        let (u, flight_log) = fc.process(&y_out, &camera_out)?;
        let attack_log = engine.as_ref().and_then(|e| e.last_log().cloned());
        record.push_with_features(
            StepRow::assemble(&plant_log, attack_log.as_ref(), &flight_log),
            flight_log.features.clone(),
        );
        if flight_log.finished {
            record.touchdown = true;
            break;
        }
        if let Some(e) = engine.as_mut() {
            e.observe_command(&u)
                .map_err(|source| SimError::Estimation { step, source })?;
        }
        plant.actuate(&u)?;
    }
    if let Some(e) = engine.as_ref() {
        record.attack_start = e.state().start_step;
        record.attack_stop = e.state().stop;
    }
    Ok(record)
}
