//! Mission state machines, cascade PID flight control and the ground target.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{inverse_mixer, RotorCommand, VehicleParams, WrenchBody};
use crate::frames::wrap_angle;
use crate::state::State12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissionKind {
    /// Follow a moving ground target at cruise altitude.
    Gvt,
    /// Take off, approach and land on the marker.
    Vtol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MissionPhase {
    Ascend,
    Track,
    Approach,
    Land,
}

impl MissionPhase {
    pub fn code(self) -> u8 {
        match self {
            MissionPhase::Ascend => 0,
            MissionPhase::Track => 1,
            MissionPhase::Approach => 2,
            MissionPhase::Land => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => MissionPhase::Ascend,
            1 => MissionPhase::Track,
            2 => MissionPhase::Approach,
            3 => MissionPhase::Land,
            _ => return None,
        })
    }

    /// The phase in which the marker is actively followed.
    pub fn is_engaged(self) -> bool {
        !matches!(self, MissionPhase::Ascend)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionThresholds {
    /// m
    pub cruise_altitude: f64,
    /// Altitude band below cruise accepted as "at altitude", m.
    pub altitude_tolerance: f64,
    /// Marker distance that switches Approach to Land, m.
    pub landing_threshold: f64,
    /// m/s
    pub ascent_rate: f64,
    /// m/s
    pub descent_rate: f64,
    /// Estimated altitude at which a landing is complete, m.
    pub touchdown_altitude: f64,
}

impl Default for MissionThresholds {
    fn default() -> Self {
        Self {
            cruise_altitude: 5.0,
            altitude_tolerance: 0.2,
            landing_threshold: 1.0,
            ascent_rate: 1.0,
            descent_rate: 0.5,
            touchdown_altitude: 0.05,
        }
    }
}

impl MissionThresholds {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("cruise_altitude", self.cruise_altitude),
            ("altitude_tolerance", self.altitude_tolerance),
            ("landing_threshold", self.landing_threshold),
            ("ascent_rate", self.ascent_rate),
            ("descent_rate", self.descent_rate),
            ("touchdown_altitude", self.touchdown_altitude),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!(
                    "mission.{name} must be finite and positive, got {v}"
                ));
            }
        }
        Ok(())
    }

    pub fn at_cruise(&self, altitude: f64) -> bool {
        altitude >= self.cruise_altitude - self.altitude_tolerance
    }
}

/// Phase transition for one step. Only forward transitions exist.
pub fn fsm_step(
    mission: MissionKind,
    phase: MissionPhase,
    marker_visible: bool,
    marker_cam: Option<&Vector3<f64>>,
    altitude: f64,
    thresholds: &MissionThresholds,
) -> MissionPhase {
    match (mission, phase) {
        (MissionKind::Gvt, MissionPhase::Ascend)
            if marker_visible && thresholds.at_cruise(altitude) =>
        {
            MissionPhase::Track
        }
        (MissionKind::Vtol, MissionPhase::Ascend)
            if marker_visible && thresholds.at_cruise(altitude) =>
        {
            MissionPhase::Approach
        }
        (MissionKind::Vtol, MissionPhase::Approach) => match marker_cam {
            Some(p) if marker_visible && p.norm() < thresholds.landing_threshold => {
                MissionPhase::Land
            }
            _ => MissionPhase::Approach,
        },
        (_, p) => p,
    }
}

/// Gains and limits of one loop. The same values apply to every axis
/// handled by the loop. Derivative action comes from the inner loops, so
/// each loop is PI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopGains {
    pub kp: f64,
    pub ki: f64,
    /// Symmetric bound on the loop output.
    pub output_limit: f64,
    /// Symmetric bound on the integrator state.
    pub integral_limit: f64,
}

impl Default for LoopGains {
    fn default() -> Self {
        Self {
            kp: 1.0,
            ki: 0.0,
            output_limit: 1.0,
            integral_limit: 0.0,
        }
    }
}

impl LoopGains {
    pub const fn new(kp: f64, ki: f64, output_limit: f64, integral_limit: f64) -> Self {
        Self {
            kp,
            ki,
            output_limit,
            integral_limit,
        }
    }

    fn validate(&self, name: &str) -> Result<(), String> {
        let ok = [self.kp, self.ki, self.integral_limit]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && self.output_limit.is_finite()
            && self.output_limit > 0.0;
        if ok {
            Ok(())
        } else {
            Err(format!(
                "gains.{name}: gains must be non-negative and limits positive"
            ))
        }
    }
}

/// Per-loop gains of the cascade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGains {
    /// Position error (m) to velocity setpoint (m/s), horizontal axes.
    pub position_xy: LoopGains,
    /// Position error to velocity setpoint, vertical axis.
    pub position_z: LoopGains,
    /// Velocity error (m/s) to acceleration (m/s^2), horizontal axes.
    pub velocity_xy: LoopGains,
    pub velocity_z: LoopGains,
    /// Angle error (rad) to body-rate setpoint (rad/s).
    pub attitude: LoopGains,
    pub yaw: LoopGains,
    /// Rate error (rad/s) to angular acceleration (rad/s^2).
    pub rate: LoopGains,
    /// Largest commanded roll or pitch, rad.
    pub max_tilt: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            position_xy: LoopGains::new(1.2, 0.0, 3.0, 0.0),
            position_z: LoopGains::new(1.5, 0.0, 1.0, 0.0),
            velocity_xy: LoopGains::new(3.0, 0.3, 4.0, 1.0),
            velocity_z: LoopGains::new(4.0, 1.0, 5.0, 2.0),
            attitude: LoopGains::new(7.0, 0.0, 4.0, 0.0),
            yaw: LoopGains::new(2.0, 0.0, 1.0, 0.0),
            rate: LoopGains::new(20.0, 0.0, 200.0, 0.0),
            max_tilt: 0.35,
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<(), String> {
        self.position_xy.validate("position_xy")?;
        self.position_z.validate("position_z")?;
        self.velocity_xy.validate("velocity_xy")?;
        self.velocity_z.validate("velocity_z")?;
        self.attitude.validate("attitude")?;
        self.yaw.validate("yaw")?;
        self.rate.validate("rate")?;
        if !(self.max_tilt > 0.0 && self.max_tilt < 1.0) {
            return Err(format!(
                "gains.max_tilt must lie in (0, 1) rad, got {}",
                self.max_tilt
            ));
        }
        Ok(())
    }
}

/// What the outer loop steers towards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setpoint {
    pub position: Vector3<f64>,
    /// Feed-forward velocity added to the position loop output.
    pub velocity: Vector3<f64>,
    /// When set, replaces the vertical position loop with this climb rate.
    pub climb_rate: Option<f64>,
    pub yaw: f64,
}

/// Setpoint for the current phase. `target` is the marker position in the
/// earth frame and `target_velocity` its estimated velocity.
pub fn mission_setpoint(
    phase: MissionPhase,
    estimate: &State12,
    hold_xy: &Vector3<f64>,
    target: Option<&Vector3<f64>>,
    target_velocity: Option<&Vector3<f64>>,
    thresholds: &MissionThresholds,
) -> Setpoint {
    let lateral = target.copied().unwrap_or(*hold_xy);
    let mut ff = target_velocity.copied().unwrap_or_else(Vector3::zeros);
    ff.z = 0.0;
    match phase {
        MissionPhase::Ascend => Setpoint {
            position: Vector3::new(lateral.x, lateral.y, thresholds.cruise_altitude),
            velocity: ff,
            climb_rate: (estimate[2] < thresholds.cruise_altitude - thresholds.altitude_tolerance)
                .then_some(thresholds.ascent_rate),
            yaw: 0.0,
        },
        MissionPhase::Track => Setpoint {
            position: Vector3::new(lateral.x, lateral.y, thresholds.cruise_altitude),
            velocity: ff,
            climb_rate: None,
            yaw: 0.0,
        },
        MissionPhase::Approach | MissionPhase::Land => Setpoint {
            position: Vector3::new(lateral.x, lateral.y, 0.0),
            velocity: ff,
            climb_rate: Some(-thresholds.descent_rate),
            yaw: 0.0,
        },
    }
}

/// Reports that the requested wrench was infeasible and the rotor command
/// was clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub command: RotorCommand,
    pub saturated: bool,
    pub attitude_setpoint: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Integrators {
    velocity: Vector3<f64>,
    rate: Vector3<f64>,
}

/// Position -> velocity -> attitude -> rate -> torque cascade with
/// per-loop anti-windup.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeController {
    pub gains: PidGains,
    pub params: VehicleParams,
    pub dt: f64,
    integrators: Integrators,
}

fn clamp_norm_xy(v: &mut Vector3<f64>, limit: f64) {
    let n = (v.x * v.x + v.y * v.y).sqrt();
    if n > limit {
        v.x *= limit / n;
        v.y *= limit / n;
    }
}

fn integrate(state: &mut f64, error: f64, dt: f64, limit: f64, saturated_same_sign: bool) {
    if saturated_same_sign {
        return;
    }
    *state = (*state + error * dt).clamp(-limit, limit);
}

impl CascadeController {
    pub fn new(gains: PidGains, params: VehicleParams, dt: f64) -> Self {
        Self {
            gains,
            params,
            dt,
            integrators: Integrators::default(),
        }
    }

    pub fn reset(&mut self) {
        self.integrators = Integrators::default();
    }

    pub fn control(&mut self, estimate: &State12, sp: &Setpoint) -> ControlOutput {
        let g = &self.gains;
        let p = estimate.position();
        let v = estimate.velocity();

        // position -> velocity
        let err = sp.position - p;
        let mut v_sp = Vector3::new(
            g.position_xy.kp * err.x,
            g.position_xy.kp * err.y,
            g.position_z.kp * err.z,
        ) + sp.velocity;
        clamp_norm_xy(&mut v_sp, g.position_xy.output_limit);
        v_sp.z = match sp.climb_rate {
            Some(rate) => rate,
            None => v_sp
                .z
                .clamp(-g.position_z.output_limit, g.position_z.output_limit),
        };

        // velocity -> acceleration
        let v_err = v_sp - v;
        let mut acc = Vector3::new(
            g.velocity_xy.kp * v_err.x + g.velocity_xy.ki * self.integrators.velocity.x,
            g.velocity_xy.kp * v_err.y + g.velocity_xy.ki * self.integrators.velocity.y,
            g.velocity_z.kp * v_err.z + g.velocity_z.ki * self.integrators.velocity.z,
        );
        let lim_xy = g.velocity_xy.output_limit;
        let sat_x = acc.x.abs() >= lim_xy && acc.x.signum() == v_err.x.signum();
        let sat_y = acc.y.abs() >= lim_xy && acc.y.signum() == v_err.y.signum();
        let sat_z = acc.z.abs() >= g.velocity_z.output_limit && acc.z.signum() == v_err.z.signum();
        clamp_norm_xy(&mut acc, lim_xy);
        acc.z = acc
            .z
            .clamp(-g.velocity_z.output_limit, g.velocity_z.output_limit);
        integrate(
            &mut self.integrators.velocity.x,
            v_err.x,
            self.dt,
            g.velocity_xy.integral_limit,
            sat_x,
        );
        integrate(
            &mut self.integrators.velocity.y,
            v_err.y,
            self.dt,
            g.velocity_xy.integral_limit,
            sat_y,
        );
        integrate(
            &mut self.integrators.velocity.z,
            v_err.z,
            self.dt,
            g.velocity_z.integral_limit,
            sat_z,
        );

        // acceleration -> collective thrust and tilt
        let t = acc + Vector3::new(0.0, 0.0, self.params.gravity);
        let yaw = estimate[8];
        let (sy, cy) = yaw.sin_cos();
        let t_local = Vector3::new(
            cy * t.x + sy * t.y,
            -sy * t.x + cy * t.y,
            t.z.max(0.1 * self.params.gravity),
        );
        let norm = t_local.norm();
        let roll_d = (-(t_local.y / norm)).asin().clamp(-g.max_tilt, g.max_tilt);
        let pitch_d = t_local.x.atan2(t_local.z).clamp(-g.max_tilt, g.max_tilt);
        let thrust = self.params.mass * t_local.z / (roll_d.cos() * pitch_d.cos());

        // attitude -> body rates
        let att_err = Vector3::new(
            roll_d - estimate[6],
            pitch_d - estimate[7],
            wrap_angle(sp.yaw - yaw),
        );
        let rate_sp = Vector3::new(
            (g.attitude.kp * att_err.x).clamp(-g.attitude.output_limit, g.attitude.output_limit),
            (g.attitude.kp * att_err.y).clamp(-g.attitude.output_limit, g.attitude.output_limit),
            (g.yaw.kp * att_err.z).clamp(-g.yaw.output_limit, g.yaw.output_limit),
        );

        // rates -> torque
        let omega = estimate.rates();
        let rate_err = rate_sp - omega;
        let mut alpha = g.rate.kp * rate_err + g.rate.ki * self.integrators.rate;
        let mut saturated_rate = [false; 3];
        for i in 0..3 {
            if alpha[i].abs() > g.rate.output_limit {
                saturated_rate[i] = alpha[i].signum() == rate_err[i].signum();
                alpha[i] = alpha[i].clamp(-g.rate.output_limit, g.rate.output_limit);
            }
        }
        for i in 0..3 {
            integrate(
                &mut self.integrators.rate[i],
                rate_err[i],
                self.dt,
                g.rate.integral_limit,
                saturated_rate[i],
            );
        }
        let inertia = Matrix3::from_diagonal(&Vector3::from(self.params.inertia));
        let torque = inertia * alpha + omega.cross(&(inertia * omega));

        let wrench = WrenchBody { thrust, torque };
        let (command, saturated) = match inverse_mixer(&wrench, &self.params) {
            Ok(u) => (u, false),
            Err(sat) => (sat.clamped, true),
        };
        ControlOutput {
            command,
            saturated,
            attitude_setpoint: Vector3::new(roll_d, pitch_d, sp.yaw),
        }
    }
}

/// Ground target driving a square clockwise (seen from above) at constant
/// speed, starting at its first corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundVehicle {
    /// m
    pub side: f64,
    /// m/s
    pub speed: f64,
    /// Earth-frame position of the first corner.
    pub origin: [f64; 2],
    /// Time the vehicle starts moving, s.
    pub start_time: f64,
    /// Duration of the uniform acceleration from rest to `speed`, s.
    pub ramp_time: f64,
    /// Current time, s.
    #[serde(skip)]
    pub time: f64,
}

impl Default for GroundVehicle {
    fn default() -> Self {
        Self {
            side: 20.0,
            speed: 1.0,
            origin: [0.0, 0.0],
            start_time: 6.0,
            ramp_time: 2.0,
            time: 0.0,
        }
    }
}

impl GroundVehicle {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return Err(format!(
                "ground_vehicle.speed must be positive, got {}",
                self.speed
            ));
        }
        if !(self.side.is_finite() && self.side > 0.0) {
            return Err(format!(
                "ground_vehicle.side must be positive, got {}",
                self.side
            ));
        }
        if !(self.start_time.is_finite() && self.start_time >= 0.0) {
            return Err("ground_vehicle.start_time must be non-negative".into());
        }
        if !(self.ramp_time.is_finite() && self.ramp_time >= 0.0) {
            return Err("ground_vehicle.ramp_time must be non-negative".into());
        }
        Ok(())
    }

    pub fn perimeter_time(&self) -> f64 {
        4.0 * self.side / self.speed
    }

    /// Distance driven since the start, and the current speed.
    fn progress(&self) -> (f64, f64) {
        let tau = (self.time - self.start_time).max(0.0);
        let ramp = self.ramp_time;
        if tau < ramp {
            (
                self.speed * tau * tau / (2.0 * ramp),
                self.speed * tau / ramp,
            )
        } else {
            (self.speed * (tau - ramp / 2.0), self.speed)
        }
    }

    /// Position at the current time.
    pub fn position(&self) -> Vector3<f64> {
        let travelled = self.progress().0 % (4.0 * self.side);
        let leg = (travelled / self.side).floor().min(3.0);
        let along = travelled - leg * self.side;
        let s = self.side;
        let (x, y) = match leg as u8 {
            0 => (0.0, along),
            1 => (along, s),
            2 => (s, s - along),
            _ => (s - along, 0.0),
        };
        Vector3::new(self.origin[0] + x, self.origin[1] + y, 0.0)
    }

    /// Velocity at the current time (zero before the start).
    pub fn velocity(&self) -> Vector3<f64> {
        let (travelled, v) = self.progress();
        let travelled = travelled % (4.0 * self.side);
        let leg = (travelled / self.side).floor().min(3.0) as u8;
        match leg {
            0 => Vector3::new(0.0, v, 0.0),
            1 => Vector3::new(v, 0.0, 0.0),
            2 => Vector3::new(0.0, -v, 0.0),
            _ => Vector3::new(-v, 0.0, 0.0),
        }
    }
}

/// Advances the ground vehicle by `dt` and returns it with its new position.
pub fn ground_vehicle_step(gv: &GroundVehicle, dt: f64) -> (GroundVehicle, Vector3<f64>) {
    let next = GroundVehicle {
        time: gv.time + dt,
        ..*gv
    };
    let p = next.position();
    (next, p)
}
