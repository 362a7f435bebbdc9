//! Noiseless twin experiments shared by the oracle tests and the acceptance run.

use std::sync::Arc;

use nalgebra::Vector3;
use stealthsim::attack::{falsify_sensors, propagate_s};
use stealthsim::control::{CascadeController, PidGains, Setpoint};
use stealthsim::dynamics::{hover_state, DiscreteDynamics, Matrix12, QuadcopterModel};
use stealthsim::estimation::{measurement_covariance, process_covariance, BeliefState, Ekf};
use stealthsim::sensing::{
    Measurement, MeasurementKind, MeasurementModel, ProcessNoiseParams, SensorNoiseParams,
};
use stealthsim::{RotorCommand, State12, VehicleParams};

pub const DT: f64 = 0.02;

pub fn deviation() -> State12 {
    let mut s = State12::zeros();
    s[0] = 0.2;
    s[4] = 0.05;
    s[6] = 0.01;
    s[8] = -0.02;
    s
}

fn setpoint() -> Setpoint {
    Setpoint {
        position: Vector3::new(2.0, -1.0, 3.0),
        velocity: Vector3::zeros(),
        climb_rate: None,
        yaw: 0.0,
    }
}

fn filter(
    prior: State12,
    model: Arc<dyn MeasurementModel>,
    dynamics: Arc<dyn DiscreteDynamics>,
) -> Ekf {
    let r = measurement_covariance(model.as_ref(), &SensorNoiseParams::default());
    let belief = BeliefState::new(prior, Matrix12::identity() * 1e-4);
    Ekf::new(
        belief,
        dynamics,
        model,
        process_covariance(&ProcessNoiseParams::default()),
        r,
        DT,
    )
}

pub struct TwinOutcome {
    /// Largest component of `x - twin - s` over the run.
    pub worst: f64,
    /// `x - twin` at the end.
    pub gap: State12,
}

/// The real vehicle and a twin started at `x0 - s0` receive the same
/// commands, computed from the twin as the flight computer would see it.
pub fn twin_trajectory(steps: usize) -> TwinOutcome {
    let params = VehicleParams::default();
    let dynamics = QuadcopterModel::new(params);
    let mut controller = CascadeController::new(PidGains::default(), params, DT);
    let mut x = hover_state(Vector3::new(0.0, 0.0, 1.0));
    let mut twin = x - deviation();
    let mut s = deviation();
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let u = controller.control(&twin, &setpoint()).command;
        s = propagate_s(&dynamics, &s, &x, &u, DT).unwrap();
        x = dynamics.step(&x, &u, DT).unwrap();
        twin = dynamics.step(&twin, &u, DT).unwrap();
        worst = worst.max((x - twin - s).0.amax());
    }
    TwinOutcome {
        worst,
        gap: x - twin,
    }
}

/// The attacker filters the genuine stream; the flight computer filters the
/// falsified one and flies on its own estimate. Both filters carry the
/// nominal covariances, so neither is artificially blind to innovations.
/// Returns the largest component of `fc_estimate - (xa - s)`.
pub fn consistency_run(kind: MeasurementKind, steps: u64) -> f64 {
    let params = VehicleParams::default();
    let dynamics: Arc<dyn DiscreteDynamics> = Arc::new(QuadcopterModel::new(params));
    let model = kind.model();
    let mut controller = CascadeController::new(PidGains::default(), params, DT);
    let mut x = hover_state(Vector3::new(0.0, 0.0, 1.0));
    let mut s = deviation();
    let mut attacker = filter(x, model.clone(), dynamics.clone());
    let mut fc = filter(x - s, model.clone(), dynamics.clone());
    let mut last: Option<RotorCommand> = None;
    let mut worst: f64 = 0.0;
    for k in 0..steps {
        let y = Measurement::new(k, model.evaluate(&x));
        attacker.advance(last.as_ref(), &y).unwrap();
        let xa = *attacker.mean();
        let forged = falsify_sensors(&y, &xa, &s, model.as_ref());
        fc.advance(last.as_ref(), &forged).unwrap();
        worst = worst.max((*fc.mean() - (xa - s)).0.amax());
        let u = controller.control(fc.mean(), &setpoint()).command;
        s = propagate_s(dynamics.as_ref(), &s, &xa, &u, DT).unwrap();
        x = dynamics.step(&x, &u, DT).unwrap();
        last = Some(u);
    }
    worst
}
