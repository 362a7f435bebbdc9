//! The twelve-dimensional quadcopter state.

use std::ops::{Add, Index, IndexMut, Neg, Sub};

use nalgebra::{SVector, Vector3};

use crate::frames::EulerAngles;

pub type Vector12 = SVector<f64, 12>;

/// `[x, y, z, vx, vy, vz, roll, pitch, yaw, p, q, r]`: earth-frame position
/// and velocity, Z-Y-X Euler angles and body angular rates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct State12(pub Vector12);

impl State12 {
    pub const DIM: usize = 12;

    pub fn zeros() -> Self {
        Self(Vector12::zeros())
    }

    pub fn from_parts(
        position: Vector3<f64>,
        velocity: Vector3<f64>,
        euler: EulerAngles,
        rates: Vector3<f64>,
    ) -> Self {
        let mut x = Self::zeros();
        x.set_position(&position);
        x.set_velocity(&velocity);
        x.set_euler(&euler);
        x.set_rates(&rates);
        x
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Self(Vector12::from_column_slice(values))
    }

    pub fn as_vector(&self) -> &Vector12 {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn position(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn euler(&self) -> EulerAngles {
        EulerAngles::new(self.0[6], self.0[7], self.0[8])
    }

    pub fn rates(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(9).into_owned()
    }

    pub fn set_position(&mut self, p: &Vector3<f64>) {
        self.0.fixed_rows_mut::<3>(0).copy_from(p);
    }

    pub fn set_velocity(&mut self, v: &Vector3<f64>) {
        self.0.fixed_rows_mut::<3>(3).copy_from(v);
    }

    pub fn set_euler(&mut self, e: &EulerAngles) {
        self.0[6] = e.roll;
        self.0[7] = e.pitch;
        self.0[8] = e.yaw;
    }

    pub fn set_rates(&mut self, w: &Vector3<f64>) {
        self.0.fixed_rows_mut::<3>(9).copy_from(w);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

impl From<Vector12> for State12 {
    fn from(v: Vector12) -> Self {
        Self(v)
    }
}

impl Add for State12 {
    type Output = State12;
    fn add(self, rhs: State12) -> State12 {
        State12(self.0 + rhs.0)
    }
}

impl Sub for State12 {
    type Output = State12;
    fn sub(self, rhs: State12) -> State12 {
        State12(self.0 - rhs.0)
    }
}

impl Neg for State12 {
    type Output = State12;
    fn neg(self) -> State12 {
        State12(-self.0)
    }
}

impl Index<usize> for State12 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for State12 {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}
