//! Consistent false-data injection on the sensor and camera channels.
//!
//! The engine keeps its own filter on the true measurements and a deviation
//! `s` between the true state and the state the falsified data portrays.
//! Each step has two halves: [`AttackEngine::intercept`] rewrites the
//! outgoing measurement and camera payload, and
//! [`AttackEngine::observe_command`] sees the rotor command the controller
//! answered with and advances `s`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DiscreteDynamics, DynamicsError, RotorCommand};
use crate::estimation::{BeliefState, Ekf, EstimationError};
use crate::perception::{
    detect_marker, ideal_observation, marker_in_camera, rasterize, render_marker, CameraModel,
    Frame, MarkerObservation, PerceptionError,
};
use crate::sensing::{Measurement, MeasurementModel};
use crate::state::State12;
use crate::tracker::{marker_earth_measurement, MarkerTracker, TrackerParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    /// Falsify the sensors and the camera consistently with a propagated deviation.
    #[default]
    Consistent,
    /// Leave the sensors alone and shift the marker image by a constant deviation.
    ImageOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "step")]
pub enum StartRule {
    /// Start when the real marker is visible and the estimated altitude is
    /// within the cruise band, i.e. when the mission engages.
    #[default]
    MissionEngaged,
    AtStep(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TrueMarkerOutOfView,
    FakeMarkerOutOfView,
    StepLimit,
    MarkerUnavailable,
    ModelFailure,
}

impl StopReason {
    pub fn code(self) -> u8 {
        match self {
            StopReason::TrueMarkerOutOfView => 1,
            StopReason::FakeMarkerOutOfView => 2,
            StopReason::StepLimit => 3,
            StopReason::MarkerUnavailable => 4,
            StopReason::ModelFailure => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub enabled: bool,
    pub mode: AttackMode,
    /// Deviation applied at the start step, in state coordinates.
    pub initial_deviation: [f64; 12],
    pub start: StartRule,
    /// Stop once the real marker leaves the camera view.
    pub stop_on_true_marker_lost: bool,
    /// Stop after this many active steps.
    pub max_steps: Option<u64>,
    /// Deviation (m) that counts as effective.
    pub alpha: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        let mut s0 = [0.0; 12];
        s0[6] = 0.01;
        Self {
            enabled: false,
            mode: AttackMode::Consistent,
            initial_deviation: s0,
            start: StartRule::MissionEngaged,
            stop_on_true_marker_lost: true,
            max_steps: None,
            alpha: 1.0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.initial_deviation.iter().any(|v| !v.is_finite()) {
            return Err("attack.initial_deviation must be finite".into());
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(format!("attack.alpha must be positive, got {}", self.alpha));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> State12 {
        State12::from_slice(&self.initial_deviation)
    }
}

/// Deviation and activity of the attack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackState {
    pub s: State12,
    pub start_step: Option<u64>,
    pub stop: Option<(u64, StopReason)>,
}

impl AttackState {
    pub fn is_active(&self) -> bool {
        self.start_step.is_some() && self.stop.is_none()
    }
}

/// Camera message as it travels from the plant to the flight computer.
#[derive(Debug, Clone, PartialEq)]
pub enum CameraPayload {
    Observation(MarkerObservation),
    Frame(Frame),
}

impl CameraPayload {
    pub fn observation(&self) -> MarkerObservation {
        match self {
            CameraPayload::Observation(o) => *o,
            CameraPayload::Frame(f) => detect_marker(f),
        }
    }
}

/// `f(xa, u) - f(xa - s, u)`.
pub fn propagate_s(
    dynamics: &dyn DiscreteDynamics,
    s: &State12,
    attacker_estimate: &State12,
    u: &RotorCommand,
    dt: f64,
) -> Result<State12, DynamicsError> {
    let a = dynamics.step(attacker_estimate, u, dt)?;
    let b = dynamics.step(&(*attacker_estimate - *s), u, dt)?;
    Ok(a - b)
}

/// `y + h(xa - s) - h(xa)`.
pub fn falsify_sensors(
    y: &Measurement,
    attacker_estimate: &State12,
    s: &State12,
    model: &dyn MeasurementModel,
) -> Measurement {
    let shift = model.evaluate(&(*attacker_estimate - *s)) - model.evaluate(attacker_estimate);
    Measurement::new(y.step, &y.values + shift)
}

/// Marker seen from the portrayed state `xa - s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FakeMarker {
    /// Camera-frame position of the marker as the portrayed vehicle sees it.
    pub p_cam: Vector3<f64>,
    /// Exact projected centre, px.
    pub center: nalgebra::Vector2<f64>,
    /// Exact projected side, px.
    pub side: f64,
    /// What the detector reports for the synthesised image.
    pub observation: MarkerObservation,
}

/// Image-plane error of a real detection: observed minus predicted centre
/// and side, px.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PixelResidual {
    pub center: nalgebra::Vector2<f64>,
    pub side: f64,
}

/// Image-plane marker consistent with the portrayed state, carrying the
/// residual of the real detection. Fails when the fake marker would leave
/// the camera view.
pub fn falsify_marker(
    attacker_estimate: &State12,
    s: &State12,
    marker_earth: &Vector3<f64>,
    cam: &CameraModel,
    side_m: f64,
    residual: &PixelResidual,
) -> Result<FakeMarker, PerceptionError> {
    let portrayed = *attacker_estimate - *s;
    let p_cam = marker_in_camera(&portrayed, marker_earth, cam);
    let ideal = ideal_observation(&p_cam, side_m, cam);
    if !ideal.visible {
        return Err(PerceptionError::BehindCamera { depth: p_cam.z });
    }
    let noisy = MarkerObservation::new(ideal.center + residual.center, ideal.side + residual.side);
    let observation = rasterize(&noisy, cam);
    if !observation.visible {
        return Err(PerceptionError::NotVisible);
    }
    Ok(FakeMarker {
        p_cam,
        center: ideal.center,
        side: ideal.side,
        observation,
    })
}

/// What the engine did on one step.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackStepLog {
    pub step: u64,
    pub active: bool,
    pub s: State12,
    pub attacker_estimate: State12,
    pub marker_earth: Option<Vector3<f64>>,
    pub fake_p_cam: Option<Vector3<f64>>,
}

/// Parameters the engine shares with the flight computer it impersonates.
#[derive(Debug, Clone)]
pub struct EngineSetup {
    pub camera: CameraModel,
    pub marker_side: f64,
    pub tracker: TrackerParams,
    pub cruise_altitude: f64,
    pub altitude_tolerance: f64,
}

#[derive(Debug)]
pub struct AttackEngine {
    pub config: AttackConfig,
    setup: EngineSetup,
    ekf: Ekf,
    tracker: MarkerTracker,
    state: AttackState,
    last_log: Option<AttackStepLog>,
    active_steps: u64,
}

impl AttackEngine {
    /// `filter` must be configured exactly like the flight computer's filter.
    pub fn new(config: AttackConfig, setup: EngineSetup, filter: Ekf) -> Self {
        let tracker = MarkerTracker::new(setup.tracker, filter.dt);
        Self {
            config,
            setup,
            ekf: filter,
            tracker,
            state: AttackState {
                s: State12::zeros(),
                start_step: None,
                stop: None,
            },
            last_log: None,
            active_steps: 0,
        }
    }

    pub fn state(&self) -> &AttackState {
        &self.state
    }

    pub fn belief(&self) -> &BeliefState {
        &self.ekf.belief
    }

    pub fn last_log(&self) -> Option<&AttackStepLog> {
        self.last_log.as_ref()
    }

    fn stop(&mut self, step: u64, reason: StopReason) {
        if self.state.stop.is_none() {
            self.state.stop = Some((step, reason));
        }
    }

    fn should_start(&self, step: u64, real_visible: bool) -> bool {
        if !self.config.enabled || self.state.start_step.is_some() {
            return false;
        }
        match self.config.start {
            StartRule::MissionEngaged => {
                real_visible
                    && self.ekf.mean()[2]
                        >= self.setup.cruise_altitude - self.setup.altitude_tolerance
            }
            StartRule::AtStep(k) => step >= k,
        }
    }

    /// Updates the attacker's beliefs on the true data and returns the
    /// payloads to forward.
    pub fn intercept(
        &mut self,
        y: &Measurement,
        camera: &CameraPayload,
    ) -> Result<(Measurement, CameraPayload), EstimationError> {
        let step = y.step;
        self.ekf.update(y)?;
        let real = camera.observation();
        let c = self.setup.camera;
        if real.visible {
            if let Ok(m) = marker_earth_measurement(
                &self.ekf.belief,
                &real,
                &c,
                self.setup.marker_side,
                &self.setup.tracker,
            ) {
                self.tracker.update(&m, step)?;
            }
        }
        // The smoothed track rather than the raw fix: raw depth noise seen
        // off-axis would reappear as lateral error once the marker is recentred.
        let marker_earth = self.tracker.position();

        if self.should_start(step, real.visible) {
            self.state.start_step = Some(step);
            self.state.s = self.config.initial_state();
        }
        if self.state.is_active() {
            if self.config.stop_on_true_marker_lost && !real.visible {
                self.stop(step, StopReason::TrueMarkerOutOfView);
            } else if self
                .config
                .max_steps
                .is_some_and(|n| self.active_steps >= n)
            {
                self.stop(step, StopReason::StepLimit);
            } else if marker_earth.is_none() {
                self.stop(step, StopReason::MarkerUnavailable);
            }
        }

        let xa = *self.ekf.mean();
        let mut log = AttackStepLog {
            step,
            active: false,
            s: if self.state.is_active() {
                self.state.s
            } else {
                State12::zeros()
            },
            attacker_estimate: xa,
            marker_earth,
            fake_p_cam: None,
        };
        let mut out = (y.clone(), camera.clone());
        if self.state.is_active() && !self.state.s.is_zero() {
            let p_e = marker_earth.expect("checked by the stop rules");
            let predicted =
                ideal_observation(&marker_in_camera(&xa, &p_e, &c), self.setup.marker_side, &c);
            let residual = if real.visible && predicted.visible {
                PixelResidual {
                    center: real.center - predicted.center,
                    side: real.side - predicted.side,
                }
            } else {
                PixelResidual::default()
            };
            match falsify_marker(
                &xa,
                &self.state.s,
                &p_e,
                &c,
                self.setup.marker_side,
                &residual,
            ) {
                Ok(fake) => {
                    let y_f = match self.config.mode {
                        AttackMode::Consistent => {
                            falsify_sensors(y, &xa, &self.state.s, self.ekf.model.as_ref())
                        }
                        AttackMode::ImageOnly => y.clone(),
                    };
                    let cam_f = match camera {
                        CameraPayload::Observation(_) => {
                            CameraPayload::Observation(fake.observation)
                        }
                        CameraPayload::Frame(f) => CameraPayload::Frame(render_marker(
                            &MarkerObservation::new(fake.center, fake.side),
                            &c,
                            f.step,
                        )),
                    };
                    log.fake_p_cam = Some(fake.p_cam);
                    out = (y_f, cam_f);
                }
                Err(_) => self.stop(step, StopReason::FakeMarkerOutOfView),
            }
        }
        log.active = self.state.is_active();
        if log.active {
            self.active_steps += 1;
        } else {
            log.s = State12::zeros();
        }
        self.last_log = Some(log);
        Ok(out)
    }

    /// Advances the deviation with the command the controller issued for
    /// this step, then time-updates the attacker's filters.
    pub fn observe_command(&mut self, u: &RotorCommand) -> Result<(), EstimationError> {
        if self.state.is_active() && self.config.mode == AttackMode::Consistent {
            let step = self.ekf.belief.step;
            match propagate_s(
                self.ekf.dynamics.as_ref(),
                &self.state.s,
                self.ekf.mean(),
                u,
                self.ekf.dt,
            ) {
                Ok(s) if s.is_finite() => self.state.s = s,
                _ => self.stop(step, StopReason::ModelFailure),
            }
        }
        self.ekf.predict(u)?;
        self.tracker.predict();
        Ok(())
    }
}
