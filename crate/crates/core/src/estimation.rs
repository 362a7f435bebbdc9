//! Extended Kalman filter over the quadcopter state.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SMatrix};
use thiserror::Error;

use crate::dynamics::{DiscreteDynamics, DynamicsError, Matrix12, RotorCommand};
use crate::frames::wrap_angle;
use crate::sensing::{Measurement, MeasurementModel, ProcessNoiseParams, SensorNoiseParams};
use crate::state::State12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("innovation covariance is not positive definite")]
    SingularInnovation,
    #[error("measurement has {got} channels, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Mean and covariance of the state estimate at a given step.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub mean: State12,
    pub covariance: Matrix12,
    pub step: u64,
}

impl BeliefState {
    pub fn new(mean: State12, covariance: Matrix12) -> Self {
        Self {
            mean,
            covariance,
            step: 0,
        }
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        self.covariance.symmetric_eigenvalues().min()
    }
}

/// Innovation `r = y - h(x_prior)` with its covariance `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRecord {
    pub step: u64,
    pub residual: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// `L^-1 r` where `S = L L^T`.
    pub whitened: DVector<f64>,
}

impl ResidualRecord {
    /// Builds the record, factoring `S` once.
    pub fn new(
        step: u64,
        residual: DVector<f64>,
        covariance: DMatrix<f64>,
    ) -> Result<Self, EstimationError> {
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or(EstimationError::SingularInnovation)?;
        let whitened = chol
            .l_dirty()
            .solve_lower_triangular(&residual)
            .ok_or(EstimationError::SingularInnovation)?;
        Ok(Self {
            step,
            residual,
            covariance,
            whitened,
        })
    }

    pub fn dim(&self) -> usize {
        self.residual.len()
    }

    /// `r^T S^-1 r`.
    pub fn normalized(&self) -> f64 {
        self.whitened.norm_squared()
    }
}

/// Central-difference Jacobian of `f` at `x`.
pub fn numeric_jacobian<F>(f: F, x: &DVector<f64>, eps: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut cols = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        probe[j] = x[j] + eps;
        let plus = f(&probe);
        probe[j] = x[j] - eps;
        let minus = f(&probe);
        probe[j] = x[j];
        cols.push((plus - minus) / (2.0 * eps));
    }
    DMatrix::from_columns(&cols)
}

/// Finite-difference step used for the transition Jacobian.
pub const TRANSITION_JACOBIAN_EPS: f64 = 1e-6;

/// Central-difference Jacobian of one noiseless transition.
pub fn transition_jacobian(
    dynamics: &dyn DiscreteDynamics,
    x: &State12,
    u: &RotorCommand,
    dt: f64,
) -> Result<Matrix12, DynamicsError> {
    let mut f = Matrix12::zeros();
    let eps = TRANSITION_JACOBIAN_EPS;
    for j in 0..12 {
        let mut plus = *x;
        let mut minus = *x;
        plus[j] += eps;
        minus[j] -= eps;
        let col = (dynamics.step(&plus, u, dt)?.0 - dynamics.step(&minus, u, dt)?.0) / (2.0 * eps);
        f.set_column(j, &col);
    }
    Ok(f)
}

fn symmetrize<const N: usize>(p: &mut SMatrix<f64, N, N>) {
    let t = p.transpose();
    *p = (*p + t) * 0.5;
}

/// Time update: mean through the noiseless transition, covariance through
/// its Jacobian plus `q`.
pub fn ekf_predict(
    belief: &BeliefState,
    u: &RotorCommand,
    dt: f64,
    dynamics: &dyn DiscreteDynamics,
    q: &Matrix12,
) -> Result<BeliefState, EstimationError> {
    let mean = dynamics.step(&belief.mean, u, dt)?;
    let f = transition_jacobian(dynamics, &belief.mean, u, dt)?;
    let mut covariance = f * belief.covariance * f.transpose() + q;
    symmetrize(&mut covariance);
    Ok(BeliefState {
        mean,
        covariance,
        step: belief.step + 1,
    })
}

/// Measurement update in Joseph form. Returns the posterior and the innovation.
pub fn ekf_update(
    belief: &BeliefState,
    y: &Measurement,
    model: &dyn MeasurementModel,
    r: &DMatrix<f64>,
) -> Result<(BeliefState, ResidualRecord), EstimationError> {
    if y.dim() != model.dim() {
        return Err(EstimationError::DimensionMismatch {
            expected: model.dim(),
            got: y.dim(),
        });
    }
    let h = model.jacobian(&belief.mean);
    let mut innovation = &y.values - model.evaluate(&belief.mean);
    if model.dim() >= 9 {
        innovation[8] = wrap_angle(innovation[8]);
    }
    let p = DMatrix::from_column_slice(12, 12, belief.covariance.as_slice());
    let ph_t = &p * h.transpose();
    let mut s = &h * &ph_t + r;
    s = (&s + s.transpose()) * 0.5;
    let chol = s
        .clone()
        .cholesky()
        .ok_or(EstimationError::SingularInnovation)?;
    // K = P H^T S^-1, computed as (S^-1 H P)^T
    let gain = chol.solve(&ph_t.transpose()).transpose();
    let correction = &gain * &innovation;
    let mut mean = belief.mean;
    for i in 0..12 {
        mean[i] += correction[i];
    }
    let i_kh = DMatrix::identity(12, 12) - &gain * &h;
    let joseph = &i_kh * &p * i_kh.transpose() + &gain * r * gain.transpose();
    let mut covariance = Matrix12::from_column_slice(joseph.as_slice());
    symmetrize(&mut covariance);
    let whitened = chol
        .l_dirty()
        .solve_lower_triangular(&innovation)
        .ok_or(EstimationError::SingularInnovation)?;
    let record = ResidualRecord {
        step: y.step,
        residual: innovation,
        covariance: s,
        whitened,
    };
    Ok((
        BeliefState {
            mean,
            covariance,
            step: y.step,
        },
        record,
    ))
}

/// Process-noise covariance matched to the configured disturbance.
pub fn process_covariance(noise: &ProcessNoiseParams) -> Matrix12 {
    Matrix12::from_diagonal(&SMatrix::<f64, 12, 1>::from_iterator(
        noise.std().iter().map(|s| s * s),
    ))
}

/// Measurement-noise covariance matched to the configured sensor noise.
pub fn measurement_covariance(
    model: &dyn MeasurementModel,
    noise: &SensorNoiseParams,
) -> DMatrix<f64> {
    DMatrix::from_diagonal(&model.noise_std(noise).map(|s| s * s))
}

/// Stateful filter: a belief plus the models it is run with.
#[derive(Debug, Clone)]
pub struct Ekf {
    pub belief: BeliefState,
    pub process_cov: Matrix12,
    pub measurement_cov: DMatrix<f64>,
    pub dynamics: Arc<dyn DiscreteDynamics>,
    pub model: Arc<dyn MeasurementModel>,
    pub dt: f64,
    started: bool,
}

impl Ekf {
    pub fn new(
        prior: BeliefState,
        dynamics: Arc<dyn DiscreteDynamics>,
        model: Arc<dyn MeasurementModel>,
        process_cov: Matrix12,
        measurement_cov: DMatrix<f64>,
        dt: f64,
    ) -> Self {
        Self {
            belief: prior,
            process_cov,
            measurement_cov,
            dynamics,
            model,
            dt,
            started: false,
        }
    }

    pub fn predict(&mut self, u: &RotorCommand) -> Result<(), EstimationError> {
        self.belief = ekf_predict(
            &self.belief,
            u,
            self.dt,
            self.dynamics.as_ref(),
            &self.process_cov,
        )?;
        Ok(())
    }

    pub fn update(&mut self, y: &Measurement) -> Result<ResidualRecord, EstimationError> {
        let (belief, record) =
            ekf_update(&self.belief, y, self.model.as_ref(), &self.measurement_cov)?;
        self.belief = belief;
        Ok(record)
    }

    /// One filter cycle for step `y.step`: predict with the command applied
    /// over the previous interval (skipped on the very first sample), then update.
    pub fn advance(
        &mut self,
        last_command: Option<&RotorCommand>,
        y: &Measurement,
    ) -> Result<ResidualRecord, EstimationError> {
        if self.started {
            if let Some(u) = last_command {
                self.predict(u)?;
            }
        }
        self.started = true;
        self.update(y)
    }

    pub fn mean(&self) -> &State12 {
        &self.belief.mean
    }
}
