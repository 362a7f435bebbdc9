//! Constant-velocity tracking of the marker's earth-frame position from
//! camera observations fused with the vehicle state estimate.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::estimation::{numeric_jacobian, BeliefState, EstimationError, ResidualRecord};
use crate::frames::{camera_position, earth_to_camera};
use crate::perception::{
    estimate_relative_position, relative_position_covariance, CameraModel, MarkerObservation,
    PerceptionError,
};
use crate::state::State12;

type Vector6 = SVector<f64, 6>;
type Matrix6 = SMatrix<f64, 6, 6>;
type Matrix3x6 = SMatrix<f64, 3, 6>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    /// Standard deviation of the white acceleration driving the marker, m/s^2.
    pub accel_std: f64,
    /// Velocity uncertainty assigned when a track is (re)started, m/s.
    pub initial_velocity_std: f64,
    /// Pixel noise on the detected centre, px.
    pub center_std: f64,
    /// Pixel noise on the detected side length, px.
    pub side_std: f64,
    /// Share of the state-estimate covariance carried into the measurement
    /// noise. The estimate error is strongly correlated from step to step,
    /// so most of it moves the track rather than the innovation.
    pub state_weight: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            accel_std: 0.5,
            initial_velocity_std: 1.5,
            center_std: (1.0f64 / 24.0 + 0.25).sqrt(),
            side_std: (1.0f64 / 12.0 + 0.25).sqrt(),
            state_weight: 0.2,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("accel_std", self.accel_std),
            ("initial_velocity_std", self.initial_velocity_std),
            ("center_std", self.center_std),
            ("side_std", self.side_std),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!(
                    "tracker.{name} must be finite and positive, got {v}"
                ));
            }
        }
        if !(self.state_weight.is_finite() && (0.0..=1.0).contains(&self.state_weight)) {
            return Err(format!(
                "tracker.state_weight must lie in [0, 1], got {}",
                self.state_weight
            ));
        }
        Ok(())
    }
}

/// Marker position in the earth frame derived from one observation, with
/// first-order covariance from both the pixel noise and the state estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisionMeasurement {
    pub position: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

fn observation_to_earth(x: &State12, rel: &Vector3<f64>, cam: &CameraModel) -> Vector3<f64> {
    camera_position(x, &cam.mount) + earth_to_camera(x, &cam.mount).transpose() * rel
}

/// `p + R_EC(x)^T * P_cam` for a visible observation.
pub fn marker_earth_measurement(
    belief: &BeliefState,
    obs: &MarkerObservation,
    cam: &CameraModel,
    side_m: f64,
    params: &TrackerParams,
) -> Result<VisionMeasurement, PerceptionError> {
    let rel = estimate_relative_position(obs, cam, side_m)?;
    let x = belief.mean;
    let position = observation_to_earth(&x, &rel, cam);
    let j = numeric_jacobian(
        |v| {
            DVector::from_column_slice(
                observation_to_earth(&State12::from_slice(v.as_slice()), &rel, cam).as_slice(),
            )
        },
        &DVector::from_column_slice(x.as_slice()),
        1e-6,
    );
    let p = DMatrix::from_column_slice(12, 12, belief.covariance.as_slice());
    let from_state = &j * p * j.transpose() * params.state_weight;
    let r_ce = earth_to_camera(&x, &cam.mount).transpose();
    let pixel = relative_position_covariance(obs, cam, side_m, params.center_std, params.side_std);
    let mut covariance =
        Matrix3::from_column_slice(from_state.as_slice()) + r_ce * pixel * r_ce.transpose();
    covariance = (covariance + covariance.transpose()) * 0.5;
    Ok(VisionMeasurement {
        position,
        covariance,
    })
}

/// Six-state constant-velocity Kalman filter on the marker position.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerTracker {
    pub params: TrackerParams,
    pub dt: f64,
    mean: Vector6,
    covariance: Matrix6,
    initialized: bool,
}

impl MarkerTracker {
    pub fn new(params: TrackerParams, dt: f64) -> Self {
        Self {
            params,
            dt,
            mean: Vector6::zeros(),
            covariance: Matrix6::zeros(),
            initialized: false,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn position(&self) -> Option<Vector3<f64>> {
        self.initialized
            .then(|| self.mean.fixed_rows::<3>(0).into_owned())
    }

    pub fn velocity(&self) -> Option<Vector3<f64>> {
        self.initialized
            .then(|| self.mean.fixed_rows::<3>(3).into_owned())
    }

    pub fn reset(&mut self) {
        self.initialized = false;
        self.mean = Vector6::zeros();
        self.covariance = Matrix6::zeros();
    }

    pub fn predict(&mut self) {
        if !self.initialized {
            return;
        }
        let dt = self.dt;
        let mut f = Matrix6::identity();
        for i in 0..3 {
            f[(i, i + 3)] = dt;
        }
        let qa = self.params.accel_std.powi(2);
        let mut q = Matrix6::zeros();
        for i in 0..3 {
            q[(i, i)] = qa * dt.powi(4) / 4.0;
            q[(i, i + 3)] = qa * dt.powi(3) / 2.0;
            q[(i + 3, i)] = qa * dt.powi(3) / 2.0;
            q[(i + 3, i + 3)] = qa * dt * dt;
        }
        self.mean = f * self.mean;
        let p = f * self.covariance * f.transpose() + q;
        self.covariance = (p + p.transpose()) * 0.5;
    }

    /// Fuses one earth-frame marker position. The first measurement only
    /// initialises the track and yields no residual.
    pub fn update(
        &mut self,
        m: &VisionMeasurement,
        step: u64,
    ) -> Result<Option<ResidualRecord>, EstimationError> {
        if !self.initialized {
            self.mean = Vector6::zeros();
            self.mean.fixed_rows_mut::<3>(0).copy_from(&m.position);
            self.covariance = Matrix6::zeros();
            self.covariance
                .fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&m.covariance);
            let v0 = self.params.initial_velocity_std.powi(2);
            for i in 3..6 {
                self.covariance[(i, i)] = v0;
            }
            self.initialized = true;
            return Ok(None);
        }
        let mut h = Matrix3x6::zeros();
        h.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
        let innovation = m.position - h * self.mean;
        let s = h * self.covariance * h.transpose() + m.covariance;
        let s = (s + s.transpose()) * 0.5;
        let chol = s.cholesky().ok_or(EstimationError::SingularInnovation)?;
        let gain = chol.solve(&(h * self.covariance)).transpose();
        self.mean += gain * innovation;
        let i_kh = Matrix6::identity() - gain * h;
        let p = i_kh * self.covariance * i_kh.transpose() + gain * m.covariance * gain.transpose();
        self.covariance = (p + p.transpose()) * 0.5;
        let record = ResidualRecord::new(
            step,
            DVector::from_column_slice(innovation.as_slice()),
            DMatrix::from_column_slice(3, 3, s.as_slice()),
        )?;
        Ok(Some(record))
    }
}
