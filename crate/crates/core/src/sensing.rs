//! Physical sensor channel: `y = h(x) + v` with per-channel Gaussian noise.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::state::State12;

/// One sensor sample, tagged with the simulation step it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub step: u64,
    pub values: DVector<f64>,
}

impl Measurement {
    pub fn new(step: u64, values: DVector<f64>) -> Self {
        Self { step, values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Standard deviations of the measurement noise on each channel group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorNoiseParams {
    /// m
    pub position: f64,
    /// m/s
    pub velocity: f64,
    /// rad
    pub attitude: f64,
    /// rad/s
    pub rate: f64,
    /// m, only used by measurement models that append a range channel.
    pub range: f64,
}

impl Default for SensorNoiseParams {
    fn default() -> Self {
        Self {
            position: 0.05,
            velocity: 0.05,
            attitude: 0.005,
            rate: 0.005,
            range: 0.05,
        }
    }
}

impl SensorNoiseParams {
    pub fn zero() -> Self {
        Self {
            position: 0.0,
            velocity: 0.0,
            attitude: 0.0,
            rate: 0.0,
            range: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("position", self.position),
            ("velocity", self.velocity),
            ("attitude", self.attitude),
            ("rate", self.rate),
            ("range", self.range),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!(
                    "sensor_noise.{name} must be finite and positive, got {v}"
                ));
            }
        }
        Ok(())
    }

    /// Standard deviations for the twelve state channels.
    pub fn state_std(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for (i, s) in out.iter_mut().enumerate() {
            *s = match i / 3 {
                0 => self.position,
                1 => self.velocity,
                2 => self.attitude,
                _ => self.rate,
            };
        }
        out
    }
}

/// Standard deviations of the additive per-step disturbance on the state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessNoiseParams {
    pub position: f64,
    pub velocity: f64,
    pub attitude: f64,
    pub rate: f64,
}

impl Default for ProcessNoiseParams {
    fn default() -> Self {
        Self {
            position: 1e-3,
            velocity: 5e-3,
            attitude: 5e-4,
            rate: 5e-3,
        }
    }
}

impl ProcessNoiseParams {
    pub fn zero() -> Self {
        Self {
            position: 0.0,
            velocity: 0.0,
            attitude: 0.0,
            rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("position", self.position),
            ("velocity", self.velocity),
            ("attitude", self.attitude),
            ("rate", self.rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!(
                    "process_noise.{name} must be finite and non-negative, got {v}"
                ));
            }
        }
        Ok(())
    }

    pub fn std(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for (i, s) in out.iter_mut().enumerate() {
            *s = match i / 3 {
                0 => self.position,
                1 => self.velocity,
                2 => self.attitude,
                _ => self.rate,
            };
        }
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> State12 {
        let std = self.std();
        let mut w = State12::zeros();
        for i in 0..12 {
            let z: f64 = rng.sample(StandardNormal);
            w[i] = std[i] * z;
        }
        w
    }
}

/// Output map `h` of the sensor channel together with its Jacobian.
pub trait MeasurementModel: Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &State12) -> DVector<f64>;
    fn jacobian(&self, x: &State12) -> DMatrix<f64>;
    /// Per-channel noise standard deviations for this output map.
    fn noise_std(&self, noise: &SensorNoiseParams) -> DVector<f64>;
}

/// `h(x) = x`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FullState;

impl MeasurementModel for FullState {
    fn dim(&self) -> usize {
        12
    }

    fn evaluate(&self, x: &State12) -> DVector<f64> {
        DVector::from_column_slice(x.as_slice())
    }

    fn jacobian(&self, _x: &State12) -> DMatrix<f64> {
        DMatrix::identity(12, 12)
    }

    fn noise_std(&self, noise: &SensorNoiseParams) -> DVector<f64> {
        DVector::from_column_slice(&noise.state_std())
    }
}

/// Full state plus the Euclidean range from the earth origin; a nonlinear `h`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RangeAugmented;

impl MeasurementModel for RangeAugmented {
    fn dim(&self) -> usize {
        13
    }

    fn evaluate(&self, x: &State12) -> DVector<f64> {
        let mut y = DVector::zeros(13);
        y.rows_mut(0, 12).copy_from_slice(x.as_slice());
        y[12] = x.position().norm();
        y
    }

    fn jacobian(&self, x: &State12) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(13, 12);
        h.view_mut((0, 0), (12, 12)).fill_with_identity();
        let p = x.position();
        let r = p.norm();
        if r > 0.0 {
            for i in 0..3 {
                h[(12, i)] = p[i] / r;
            }
        }
        h
    }

    fn noise_std(&self, noise: &SensorNoiseParams) -> DVector<f64> {
        let mut s = DVector::zeros(13);
        s.rows_mut(0, 12).copy_from_slice(&noise.state_std());
        s[12] = noise.range;
        s
    }
}

/// Selectable output maps for configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    #[default]
    FullState,
    RangeAugmented,
}

impl MeasurementKind {
    pub fn model(self) -> std::sync::Arc<dyn MeasurementModel> {
        match self {
            MeasurementKind::FullState => std::sync::Arc::new(FullState),
            MeasurementKind::RangeAugmented => std::sync::Arc::new(RangeAugmented),
        }
    }
}

/// `h(x) + v` with independent Gaussian channel noise.
pub fn measure<R: Rng + ?Sized>(
    x: &State12,
    step: u64,
    model: &dyn MeasurementModel,
    noise: &SensorNoiseParams,
    rng: &mut R,
) -> Measurement {
    let mut y = model.evaluate(x);
    let std = model.noise_std(noise);
    for (v, s) in y.iter_mut().zip(std.iter()) {
        let z: f64 = rng.sample(StandardNormal);
        *v += s * z;
    }
    Measurement::new(step, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_output_map() {
        assert_eq!(FullState.evaluate(&State12::zeros()), DVector::zeros(12));
        let x = State12::from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let mut s = State12::zeros();
        s[1] = 0.1;
        s[6] = 0.01;
        let diff = FullState.evaluate(&(x - s)) - FullState.evaluate(&x);
        let expected = -DVector::from_column_slice(s.as_slice());
        assert!((diff - expected).abs().max() < 1e-15);
    }

    #[test]
    fn range_channel() {
        let mut x = State12::zeros();
        x.set_position(&Vector3::new(3.0, 4.0, 0.0));
        assert_eq!(RangeAugmented.evaluate(&x)[12], 5.0);
        let h = RangeAugmented.jacobian(&x);
        assert_eq!(h[(12, 0)], 0.6);
        assert_eq!(h[(12, 1)], 0.8);
    }

    #[test]
    fn zero_noise_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = State12::from_slice(&[0.5; 12]);
        let y = measure(&x, 3, &FullState, &SensorNoiseParams::zero(), &mut rng);
        assert_eq!(y.values, FullState.evaluate(&x));
        assert_eq!(y.step, 3);
    }

    #[test]
    fn seeded_samples_repeat() {
        let x = State12::zeros();
        let noise = SensorNoiseParams::default();
        let a = measure(&x, 0, &FullState, &noise, &mut ChaCha8Rng::seed_from_u64(9));
        let b = measure(&x, 0, &FullState, &noise, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_moments_match_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let noise = SensorNoiseParams::default();
        let x = State12::from_slice(&[
            1.0, -2.0, 5.0, 0.5, 0.0, -0.5, 0.1, -0.1, 0.7, 0.0, 0.2, -0.3,
        ]);
        let n = 100_000;
        let mut sum = DVector::<f64>::zeros(12);
        let mut sq = DVector::<f64>::zeros(12);
        let clean = FullState.evaluate(&x);
        for _ in 0..n {
            let d = measure(&x, 0, &FullState, &noise, &mut rng).values - &clean;
            sum += &d;
            sq += d.component_mul(&d);
        }
        let std = noise.state_std();
        for i in 0..12 {
            let mean = sum[i] / n as f64;
            assert!(
                mean.abs() <= 4.0 * std[i] / (n as f64).sqrt(),
                "channel {i} mean {mean}"
            );
            let var = sq[i] / n as f64 - mean * mean;
            assert!(
                (var / (std[i] * std[i]) - 1.0).abs() < 0.05,
                "channel {i} variance {var}"
            );
        }
    }
}
