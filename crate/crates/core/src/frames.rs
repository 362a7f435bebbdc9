//! Rotation and frame utilities.
//!
//! Conventions used throughout the crate:
//!
//! * earth frame is Z-up (gravity acts along `-e3`);
//! * body frame is forward-left-up, thrust along `+z` body;
//! * Euler angles follow the Z-Y-X (yaw-pitch-roll) sequence, so the
//!   body-to-earth rotation is `Rz(yaw) * Ry(pitch) * Rx(roll)`;
//! * the camera frame has `x` to the image right, `y` to the image bottom
//!   and `z` along the optical axis.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::state::State12;

/// A 3x3 rotation matrix. Constructors in this module always return
/// orthonormal matrices with unit determinant.
pub type RotationMatrix = Matrix3<f64>;

/// Roll, pitch, yaw in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub const fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.roll, self.pitch, self.yaw)
    }

    pub fn is_finite(&self) -> bool {
        self.roll.is_finite() && self.pitch.is_finite() && self.yaw.is_finite()
    }
}

/// Maps `v` to the skew-symmetric matrix with `hat(v) * w == v.cross(w)`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Body-to-earth rotation for Z-Y-X Euler angles.
pub fn euler_to_rotation(e: &EulerAngles) -> RotationMatrix {
    let (sr, cr) = e.roll.sin_cos();
    let (sp, cp) = e.pitch.sin_cos();
    let (sy, cy) = e.yaw.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Inverse of [`euler_to_rotation`] on the gimbal-safe envelope `|pitch| < pi/2`.
pub fn rotation_to_euler(r: &RotationMatrix) -> EulerAngles {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    EulerAngles { roll, pitch, yaw }
}

/// Third column of the body-to-earth rotation: the thrust direction in the
/// earth frame. Cheaper than building the full matrix.
pub fn body_z_in_earth(e: &EulerAngles) -> Vector3<f64> {
    let (sr, cr) = e.roll.sin_cos();
    let (sp, cp) = e.pitch.sin_cos();
    let (sy, cy) = e.yaw.sin_cos();
    Vector3::new(cy * sp * cr + sy * sr, sy * sp * cr - cy * sr, cp * cr)
}

/// Fixed placement of the camera on the airframe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraMount {
    /// Rotation taking body-frame vectors to camera-frame vectors.
    pub body_to_camera: RotationMatrix,
    /// Camera optical centre expressed in the body frame, metres.
    pub offset: Vector3<f64>,
}

impl CameraMount {
    /// Down-facing camera at the centre of mass. Image right is body `-y`,
    /// image down is body `-x` and the optical axis is body `-z`.
    pub fn down_facing() -> Self {
        Self {
            body_to_camera: Matrix3::new(0.0, -1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -1.0),
            offset: Vector3::zeros(),
        }
    }

    /// Camera frame coincident with the body frame.
    pub fn identity() -> Self {
        Self {
            body_to_camera: Matrix3::identity(),
            offset: Vector3::zeros(),
        }
    }

    pub fn is_valid(&self) -> bool {
        is_rotation(&self.body_to_camera, 1e-9) && self.offset.iter().all(|v| v.is_finite())
    }
}

impl Default for CameraMount {
    fn default() -> Self {
        Self::down_facing()
    }
}

/// Earth-to-camera rotation for the attitude carried by `x`.
pub fn earth_to_camera(x: &State12, mount: &CameraMount) -> RotationMatrix {
    mount.body_to_camera * euler_to_rotation(&x.euler()).transpose()
}

/// Camera optical centre in the earth frame.
pub fn camera_position(x: &State12, mount: &CameraMount) -> Vector3<f64> {
    if mount.offset == Vector3::zeros() {
        x.position()
    } else {
        x.position() + euler_to_rotation(&x.euler()) * mount.offset
    }
}

/// True when `r` is orthonormal with determinant one, within `tol`.
pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let gram = r.transpose() * r - Matrix3::identity();
    gram.iter().all(|v| v.abs() <= tol) && (r.determinant() - 1.0).abs() <= tol
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = a % two_pi;
    if w <= -std::f64::consts::PI {
        w += two_pi;
    } else if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}
