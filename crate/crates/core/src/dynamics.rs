//! Newton-Euler quadcopter model, rotor mixer and RK4 discretisation.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{body_z_in_earth, hat, EulerAngles};
use crate::state::State12;

pub type Matrix12 = SMatrix<f64, 12, 12>;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DynamicsError {
    #[error("pitch {pitch:.4} rad exceeds the gimbal-safe limit {limit:.4} rad")]
    GimbalProximity { pitch: f64, limit: f64 },
    #[error("rotor command {index} is negative ({value})")]
    NegativeRotorCommand { index: usize, value: f64 },
    #[error("rotor command {index} ({value}) exceeds the actuator limit {limit}")]
    RotorCommandAboveLimit {
        index: usize,
        value: f64,
        limit: f64,
    },
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("state is not finite")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("requested wrench needs rotor commands outside [0, w2_max]; clamped to {clamped:?}")]
pub struct MixerSaturation {
    pub clamped: RotorCommand,
}

/// Squared rotor angular velocities `[w1^2, w2^2, w3^2, w4^2]`, rad^2/s^2.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RotorCommand(pub Vector4<f64>);

impl RotorCommand {
    pub fn new(w1: f64, w2: f64, w3: f64, w4: f64) -> Self {
        Self(Vector4::new(w1, w2, w3, w4))
    }

    pub fn uniform(w_sq: f64) -> Self {
        Self(Vector4::repeat(w_sq))
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Physical parameters of the airframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// Diagonal of the inertia matrix, kg m^2.
    pub inertia: [f64; 3],
    /// Motor-to-centre distance, m.
    pub arm_length: f64,
    /// Thrust coefficient b, N s^2.
    pub thrust_coeff: f64,
    /// Drag coefficient d, N m s^2.
    pub drag_coeff: f64,
    pub gravity: f64,
    /// Upper actuator bound on each squared rotor speed.
    pub max_rotor_speed_sq: f64,
    /// Largest |pitch| accepted before the Euler representation is
    /// considered too close to gimbal lock.
    pub gimbal_limit: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1.5,
            inertia: [0.02, 0.02, 0.04],
            arm_length: 0.25,
            thrust_coeff: 1e-5,
            drag_coeff: 1e-7,
            gravity: 9.81,
            max_rotor_speed_sq: 1.0e6,
            gimbal_limit: 1.2,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("mass", self.mass),
            ("inertia[0]", self.inertia[0]),
            ("inertia[1]", self.inertia[1]),
            ("inertia[2]", self.inertia[2]),
            ("arm_length", self.arm_length),
            ("thrust_coeff", self.thrust_coeff),
            ("drag_coeff", self.drag_coeff),
            ("gravity", self.gravity),
            ("max_rotor_speed_sq", self.max_rotor_speed_sq),
            ("gimbal_limit", self.gimbal_limit),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!(
                    "vehicle.{name} must be finite and positive, got {v}"
                ));
            }
        }
        if self.gimbal_limit >= std::f64::consts::FRAC_PI_2 {
            return Err("vehicle.gimbal_limit must be below pi/2".into());
        }
        Ok(())
    }

    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.inertia))
    }

    /// Squared rotor speed that holds the vehicle in hover when applied to
    /// all four rotors.
    pub fn hover_rotor_speed_sq(&self) -> f64 {
        self.mass * self.gravity / (4.0 * self.thrust_coeff)
    }
}

/// Collective thrust and body torques.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WrenchBody {
    pub thrust: f64,
    pub torque: Vector3<f64>,
}

/// Thrust/torque from squared rotor speeds.
pub fn mixer(u: &RotorCommand, params: &VehicleParams) -> Result<WrenchBody, DynamicsError> {
    for (index, value) in u.0.iter().copied().enumerate() {
        if value < 0.0 || value.is_nan() {
            return Err(DynamicsError::NegativeRotorCommand { index, value });
        }
    }
    Ok(mix_unchecked(u, params))
}

fn mix_unchecked(u: &RotorCommand, params: &VehicleParams) -> WrenchBody {
    let b = params.thrust_coeff;
    let bl = b * params.arm_length;
    let d = params.drag_coeff;
    let [w1, w2, w3, w4] = [u.0[0], u.0[1], u.0[2], u.0[3]];
    WrenchBody {
        thrust: b * (w1 + w2 + w3 + w4),
        torque: Vector3::new(bl * (w4 - w2), bl * (w3 - w1), d * (w1 - w2 + w3 - w4)),
    }
}

/// Exact inverse of [`mixer`]. When the solution leaves `[0, w2_max]` the
/// clamped command is returned inside the error.
pub fn inverse_mixer(
    w: &WrenchBody,
    params: &VehicleParams,
) -> Result<RotorCommand, MixerSaturation> {
    let s = w.thrust / params.thrust_coeff;
    let a = w.torque.x / (params.thrust_coeff * params.arm_length);
    let b = w.torque.y / (params.thrust_coeff * params.arm_length);
    let c = w.torque.z / params.drag_coeff;
    let odd = 0.5 * (s + c);
    let even = 0.5 * (s - c);
    let raw = Vector4::new(
        0.5 * (odd - b),
        0.5 * (even - a),
        0.5 * (odd + b),
        0.5 * (even + a),
    );
    let max = params.max_rotor_speed_sq;
    if raw.iter().all(|v| (0.0..=max).contains(v)) {
        Ok(RotorCommand(raw))
    } else {
        let clamped = raw.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, max) });
        Err(MixerSaturation {
            clamped: RotorCommand(clamped),
        })
    }
}

/// Maps body rates to Euler angle rates for the Z-Y-X convention.
pub fn euler_rate_matrix(e: &EulerAngles) -> Matrix3<f64> {
    let (sr, cr) = e.roll.sin_cos();
    let (tp, cp) = (e.pitch.tan(), e.pitch.cos());
    Matrix3::new(1.0, sr * tp, cr * tp, 0.0, cr, -sr, 0.0, sr / cp, cr / cp)
}

fn check_gimbal(x: &State12, params: &VehicleParams) -> Result<(), DynamicsError> {
    let pitch = x[7];
    if !pitch.is_finite() || pitch.abs() > params.gimbal_limit {
        return Err(DynamicsError::GimbalProximity {
            pitch,
            limit: params.gimbal_limit,
        });
    }
    Ok(())
}

/// Time derivative of the state under the Newton-Euler equations.
pub fn continuous_derivative(
    x: &State12,
    u: &RotorCommand,
    params: &VehicleParams,
) -> Result<State12, DynamicsError> {
    check_gimbal(x, params)?;
    let wrench = mixer(u, params)?;
    Ok(derivative_with_wrench(x, &wrench, params))
}

fn derivative_with_wrench(x: &State12, wrench: &WrenchBody, params: &VehicleParams) -> State12 {
    let e = x.euler();
    let omega = x.rates();
    let accel = body_z_in_earth(&e) * (wrench.thrust / params.mass)
        - Vector3::new(0.0, 0.0, params.gravity);
    let euler_dot = euler_rate_matrix(&e) * omega;
    let i = Vector3::from(params.inertia);
    let i_omega = i.component_mul(&omega);
    let omega_dot = (wrench.torque - omega.cross(&i_omega)).component_div(&i);
    let mut d = State12::zeros();
    d.set_position(&x.velocity());
    d.set_velocity(&accel);
    d[6] = euler_dot.x;
    d[7] = euler_dot.y;
    d[8] = euler_dot.z;
    d.set_rates(&omega_dot);
    d
}

/// Noiseless discrete-time transition `x_{t+1} = f(x_t, u_t)`.
pub trait DiscreteDynamics: std::fmt::Debug + Send + Sync {
    fn step(&self, x: &State12, u: &RotorCommand, dt: f64) -> Result<State12, DynamicsError>;
}

/// The quadcopter model discretised with classical RK4 (zero-order hold on `u`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadcopterModel {
    pub params: VehicleParams,
}

impl QuadcopterModel {
    pub fn new(params: VehicleParams) -> Self {
        Self { params }
    }
}

impl DiscreteDynamics for QuadcopterModel {
    fn step(&self, x: &State12, u: &RotorCommand, dt: f64) -> Result<State12, DynamicsError> {
        rk4_step(x, u, dt, &self.params)
    }
}

fn rk4_step(
    x: &State12,
    u: &RotorCommand,
    dt: f64,
    params: &VehicleParams,
) -> Result<State12, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::NonPositiveStep(dt));
    }
    let wrench = mixer(u, params)?;
    let f = |s: &State12| -> Result<State12, DynamicsError> {
        check_gimbal(s, params)?;
        Ok(derivative_with_wrench(s, &wrench, params))
    };
    let k1 = f(x)?.0;
    let k2 = f(&State12(x.0 + k1 * (0.5 * dt)))?.0;
    let k3 = f(&State12(x.0 + k2 * (0.5 * dt)))?.0;
    let k4 = f(&State12(x.0 + k3 * dt))?.0;
    let next = State12(x.0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0));
    if !next.is_finite() {
        return Err(DynamicsError::NonFinite);
    }
    Ok(next)
}

/// One plant step: RK4 over `dt` followed by the additive disturbance `w`.
pub fn step(
    x: &State12,
    u: &RotorCommand,
    dt: f64,
    w: &State12,
    params: &VehicleParams,
) -> Result<State12, DynamicsError> {
    Ok(rk4_step(x, u, dt, params)? + *w)
}

/// Analytic Jacobian of [`continuous_derivative`] with respect to the state.
pub fn continuous_jacobian(
    x: &State12,
    u: &RotorCommand,
    params: &VehicleParams,
) -> Result<Matrix12, DynamicsError> {
    check_gimbal(x, params)?;
    let wrench = mixer(u, params)?;
    Ok(jacobian_with_wrench(x, &wrench, params))
}

fn jacobian_with_wrench(x: &State12, wrench: &WrenchBody, params: &VehicleParams) -> Matrix12 {
    let mut a = Matrix12::zeros();
    let (sr, cr) = x[6].sin_cos();
    let (sp, cp) = x[7].sin_cos();
    let (sy, cy) = x[8].sin_cos();
    let tp = sp / cp;
    let (q, r) = (x[10], x[11]);

    for i in 0..3 {
        a[(i, 3 + i)] = 1.0;
    }

    let k = wrench.thrust / params.mass;
    let d_roll = Vector3::new(-cy * sp * sr + sy * cr, -sy * sp * sr - cy * cr, -cp * sr);
    let d_pitch = Vector3::new(cy * cp * cr, sy * cp * cr, -sp * cr);
    let d_yaw = Vector3::new(-sy * sp * cr + cy * sr, cy * sp * cr + sy * sr, 0.0);
    for i in 0..3 {
        a[(3 + i, 6)] = k * d_roll[i];
        a[(3 + i, 7)] = k * d_pitch[i];
        a[(3 + i, 8)] = k * d_yaw[i];
    }

    let inner = sr * q + cr * r;
    a[(6, 6)] = (cr * q - sr * r) * tp;
    a[(6, 7)] = inner / (cp * cp);
    a[(7, 6)] = -sr * q - cr * r;
    a[(8, 6)] = (cr * q - sr * r) / cp;
    a[(8, 7)] = inner * sp / (cp * cp);
    let w = euler_rate_matrix(&x.euler());
    a.fixed_view_mut::<3, 3>(6, 9).copy_from(&w);

    let inertia = params.inertia_matrix();
    let omega = x.rates();
    let i_inv = Matrix3::from_diagonal(&Vector3::from(params.inertia).map(|v| 1.0 / v));
    let d_gyro = -(i_inv * (hat(&omega) * inertia - hat(&(inertia * omega))));
    a.fixed_view_mut::<3, 3>(9, 9).copy_from(&d_gyro);
    a
}

/// Analytic Jacobian of one noiseless RK4 step, obtained by differentiating
/// through the four stages.
pub fn step_jacobian(
    x: &State12,
    u: &RotorCommand,
    dt: f64,
    params: &VehicleParams,
) -> Result<Matrix12, DynamicsError> {
    let wrench = mixer(u, params)?;
    let eval = |s: &State12| -> Result<(SVector<f64, 12>, Matrix12), DynamicsError> {
        check_gimbal(s, params)?;
        Ok((
            derivative_with_wrench(s, &wrench, params).0,
            jacobian_with_wrench(s, &wrench, params),
        ))
    };
    let id = Matrix12::identity();
    let (k1, a1) = eval(x)?;
    let j1 = a1;
    let (k2, a2) = eval(&State12(x.0 + k1 * (0.5 * dt)))?;
    let j2 = a2 * (id + j1 * (0.5 * dt));
    let (k3, a3) = eval(&State12(x.0 + k2 * (0.5 * dt)))?;
    let j3 = a3 * (id + j2 * (0.5 * dt));
    let (_, a4) = eval(&State12(x.0 + k3 * dt))?;
    let j4 = a4 * (id + j3 * dt);
    Ok(id + (j1 + j2 * 2.0 + j3 * 2.0 + j4) * (dt / 6.0))
}

/// Linear test dynamics `x' = A x + B u`, used to check attack recursions
/// against closed-form answers.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Matrix12,
    pub b: SMatrix<f64, 12, 4>,
}

impl DiscreteDynamics for LinearModel {
    fn step(&self, x: &State12, u: &RotorCommand, _dt: f64) -> Result<State12, DynamicsError> {
        Ok(State12(self.a * x.0 + self.b * u.0))
    }
}

/// Hover state at `position` with zero attitude and rates.
pub fn hover_state(position: Vector3<f64>) -> State12 {
    State12::from_parts(
        position,
        Vector3::zeros(),
        EulerAngles::default(),
        Vector3::zeros(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn example_params() -> VehicleParams {
        VehicleParams {
            arm_length: 0.25,
            thrust_coeff: 1e-5,
            drag_coeff: 1e-7,
            ..VehicleParams::default()
        }
    }

    #[test]
    fn symmetric_rotors_give_pure_thrust() {
        let w = mixer(&RotorCommand::uniform(1e6), &example_params()).unwrap();
        assert_relative_eq!(w.thrust, 40.0, epsilon = 1e-9);
        assert_eq!(w.torque, Vector3::zeros());
        let zero = mixer(&RotorCommand::default(), &example_params()).unwrap();
        assert_eq!(zero.thrust, 0.0);
        assert_eq!(zero.torque, Vector3::zeros());
    }

    #[test]
    fn mixer_rejects_negative_command() {
        let err = mixer(&RotorCommand::new(1.0, -2.0, 0.0, 0.0), &example_params()).unwrap_err();
        assert!(matches!(
            err,
            DynamicsError::NegativeRotorCommand { index: 1, .. }
        ));
    }

    #[test]
    fn hover_wrench_inverts_to_equal_rotors() {
        let p = VehicleParams::default();
        let w = WrenchBody {
            thrust: p.mass * p.gravity,
            torque: Vector3::zeros(),
        };
        let u = inverse_mixer(&w, &p).unwrap();
        for v in u.0.iter() {
            assert_relative_eq!(
                *v,
                p.mass * p.gravity / (4.0 * p.thrust_coeff),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn infeasible_wrench_saturates() {
        let p = VehicleParams::default();
        let w = WrenchBody {
            thrust: 1.0,
            torque: Vector3::new(1.0, 0.0, 0.0),
        };
        let sat = inverse_mixer(&w, &p).unwrap_err();
        assert!(sat
            .clamped
            .0
            .iter()
            .all(|v| (0.0..=p.max_rotor_speed_sq).contains(v)));
        assert_eq!(sat.clamped.0[1], 0.0);
    }

    proptest! {
        #[test]
        fn mixer_round_trip(u in prop::array::uniform4(0.0..1.0e6f64)) {
            let p = VehicleParams::default();
            let cmd = RotorCommand(Vector4::from(u));
            let back = inverse_mixer(&mixer(&cmd, &p).unwrap(), &p);
            // tiny negative round-off near zero is reported as saturation; accept the clamped form
            let back = match back { Ok(c) => c, Err(s) => s.clamped };
            for i in 0..4 {
                prop_assert!((back.0[i] - cmd.0[i]).abs() <= 1e-9 * 1e6);
            }
        }
    }

    #[test]
    fn hover_is_an_equilibrium() {
        let p = VehicleParams::default();
        let x = hover_state(Vector3::new(1.0, 2.0, 5.0));
        let u = RotorCommand::uniform(p.hover_rotor_speed_sq());
        let d = continuous_derivative(&x, &u, &p).unwrap();
        assert!(d.norm() < 1e-12);
        let next = step(&x, &u, 0.02, &State12::zeros(), &p).unwrap();
        assert!((next - x).norm() <= 1e-9);
    }

    #[test]
    fn free_fall_accelerates_down() {
        let p = VehicleParams::default();
        let x = hover_state(Vector3::new(0.0, 0.0, 10.0));
        let d = continuous_derivative(&x, &RotorCommand::default(), &p).unwrap();
        assert_relative_eq!(d.velocity(), Vector3::new(0.0, 0.0, -p.gravity));
        let next = step(&x, &RotorCommand::default(), 0.02, &State12::zeros(), &p).unwrap();
        assert_relative_eq!(next[5], -p.gravity * 0.02, epsilon = 1e-6);
    }

    #[test]
    fn pure_yaw_torque() {
        let p = VehicleParams::default();
        let h = p.hover_rotor_speed_sq();
        let delta = 1000.0;
        let u = RotorCommand::new(h + delta, h - delta, h + delta, h - delta);
        let d = continuous_derivative(&hover_state(Vector3::zeros()), &u, &p).unwrap();
        let tau_z = p.drag_coeff * 4.0 * delta;
        assert_relative_eq!(
            d.rates(),
            Vector3::new(0.0, 0.0, tau_z / p.inertia[2]),
            epsilon = 1e-12
        );
    }

    #[test]
    fn gimbal_proximity_is_reported() {
        let p = VehicleParams::default();
        let mut x = State12::zeros();
        x[7] = 1.3;
        assert!(matches!(
            continuous_derivative(&x, &RotorCommand::default(), &p),
            Err(DynamicsError::GimbalProximity { .. })
        ));
    }

    fn smooth_test_state() -> (State12, RotorCommand) {
        let p = VehicleParams::default();
        let h = p.hover_rotor_speed_sq();
        let x = State12::from_parts(
            Vector3::new(0.3, -0.2, 4.0),
            Vector3::new(0.5, -0.4, 0.1),
            EulerAngles::new(0.12, -0.08, 0.4),
            Vector3::new(0.3, -0.2, 0.1),
        );
        (x, RotorCommand::new(h * 1.05, h * 0.97, h * 1.01, h * 0.99))
    }

    #[test]
    fn rk4_error_scales_with_fifth_power() {
        // Richardson check against a fine-step reference integration.
        let p = VehicleParams::default();
        let (x0, u) = smooth_test_state();
        let model = QuadcopterModel::new(p);
        let integrate = |dt: f64, n: usize| {
            let mut x = x0;
            for _ in 0..n {
                x = model.step(&x, &u, dt).unwrap();
            }
            x
        };
        let horizon = 0.08;
        let reference = integrate(horizon / 4096.0, 4096);
        let one_step = (integrate(horizon, 1) - reference).norm();
        let two_steps = (integrate(horizon / 2.0, 2) - reference).norm();
        // Local error O(dt^5): halving the step over a fixed horizon cuts the
        // error by about 2^4 globally; require at least a factor 8.
        assert!(one_step < 1e-6, "one-step error {one_step}");
        assert!(two_steps * 8.0 < one_step, "{two_steps} vs {one_step}");
    }

    #[test]
    fn deterministic_stepping() {
        let p = VehicleParams::default();
        let (x0, u) = smooth_test_state();
        let run = || {
            let mut x = x0;
            let mut out = Vec::new();
            for _ in 0..50 {
                x = step(&x, &u, 0.02, &State12::zeros(), &p).unwrap();
                out.push(x);
            }
            out
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(l, r)| l
            .0
            .iter()
            .zip(r.0.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits())));
    }

    #[test]
    fn angular_momentum_conserved_without_torque() {
        let p = VehicleParams::default();
        let mut x = State12::zeros();
        x.set_rates(&Vector3::new(0.8, -0.5, 0.3));
        x[6] = 0.05;
        // zero thrust and zero torque
        let u = RotorCommand::default();
        let i = Vector3::from(p.inertia);
        let l0 = i.component_mul(&x.rates()).norm();
        let model = QuadcopterModel::new(p);
        for _ in 0..1000 {
            x = model.step(&x, &u, 0.001).unwrap();
        }
        let l1 = i.component_mul(&x.rates()).norm();
        assert!((l1 - l0).abs() < 1e-6, "{l0} -> {l1}");
    }

    #[test]
    fn analytic_continuous_jacobian_matches_differences() {
        let p = VehicleParams::default();
        let (x, u) = smooth_test_state();
        let a = continuous_jacobian(&x, &u, &p).unwrap();
        let eps = 1e-6;
        for j in 0..12 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += eps;
            xm[j] -= eps;
            let col = (continuous_derivative(&xp, &u, &p).unwrap().0
                - continuous_derivative(&xm, &u, &p).unwrap().0)
                / (2.0 * eps);
            for i in 0..12 {
                assert!(
                    (a[(i, j)] - col[i]).abs() < 1e-6 * (1.0 + col[i].abs()),
                    "({i},{j}) {} vs {}",
                    a[(i, j)],
                    col[i]
                );
            }
        }
    }

    #[test]
    fn linear_model_steps_exactly() {
        let model = LinearModel {
            a: Matrix12::identity() * 2.0,
            b: SMatrix::<f64, 12, 4>::zeros(),
        };
        let x = State12::from_slice(&[1.0; 12]);
        let next = model.step(&x, &RotorCommand::default(), 0.1).unwrap();
        assert_eq!(next, State12::from_slice(&[2.0; 12]));
    }
}
