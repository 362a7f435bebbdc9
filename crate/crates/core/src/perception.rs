//! Camera channel: pinhole projection, synthetic frames, marker detection
//! and relative-position recovery from the known marker size.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{camera_position, earth_to_camera, CameraMount};
use crate::state::State12;

pub const BACKGROUND_INTENSITY: u8 = 20;
pub const MARKER_INTENSITY: u8 = 255;
pub const DETECTION_THRESHOLD: u8 = 128;
/// Smallest component area, in pixels, reported as a visible marker.
pub const MIN_MARKER_AREA: usize = 25;
/// Smallest side length, in pixels, reported as a visible marker.
pub const MIN_MARKER_SIDE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PerceptionError {
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("marker is not visible")]
    NotVisible,
}

/// Intrinsics and placement of the down-facing camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    /// Focal length in pixels.
    pub focal_length: f64,
    pub width: u32,
    pub height: u32,
    #[serde(skip)]
    pub mount: CameraMount,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            focal_length: 800.0,
            width: 1280,
            height: 720,
            mount: CameraMount::down_facing(),
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.focal_length.is_finite() && self.focal_length > 0.0) {
            return Err(format!(
                "camera.focal_length must be positive, got {}",
                self.focal_length
            ));
        }
        if self.width < 8 || self.height < 8 {
            return Err(format!(
                "camera resolution {}x{} is too small",
                self.width, self.height
            ));
        }
        if !self.mount.is_valid() {
            return Err("camera mount rotation is not orthonormal".into());
        }
        Ok(())
    }
}

/// Square marker of known physical side lying on the ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerGeometry {
    /// m
    pub side: f64,
    /// Earth-frame centre, m.
    pub center: Vector3<f64>,
}

/// Marker centre relative to the image centre and side length, both in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerObservation {
    pub center: Vector2<f64>,
    pub side: f64,
    pub visible: bool,
}

impl MarkerObservation {
    pub fn not_visible() -> Self {
        Self {
            center: Vector2::zeros(),
            side: 0.0,
            visible: false,
        }
    }

    pub fn new(center: Vector2<f64>, side: f64) -> Self {
        Self {
            center,
            side,
            visible: true,
        }
    }
}

/// 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub step: u64,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn filled(width: u32, height: u32, step: u64, value: u8) -> Self {
        Self {
            width,
            height,
            step,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    pub fn get(&self, col: u32, row: u32) -> u8 {
        self.pixels[row as usize * self.width as usize + col as usize]
    }

    /// Binary PGM (`P5`) encoding.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_pgm())
    }
}

/// Pinhole projection of a camera-frame point onto the image plane.
pub fn project(p_cam: &Vector3<f64>, cam: &CameraModel) -> Result<Vector2<f64>, PerceptionError> {
    if !(p_cam.z > 0.0) {
        return Err(PerceptionError::BehindCamera { depth: p_cam.z });
    }
    let k = cam.focal_length / p_cam.z;
    Ok(Vector2::new(k * p_cam.x, k * p_cam.y))
}

/// Earth-frame point expressed in the camera frame of a vehicle in state `x`.
pub fn marker_in_camera(
    x: &State12,
    marker_earth: &Vector3<f64>,
    cam: &CameraModel,
) -> Vector3<f64> {
    earth_to_camera(x, &cam.mount) * (marker_earth - camera_position(x, &cam.mount))
}

/// Exact (unquantised) observation of a marker of side `side_m` centred at
/// `p_cam`. Visibility here only means the marker is in front of the camera.
pub fn ideal_observation(
    p_cam: &Vector3<f64>,
    side_m: f64,
    cam: &CameraModel,
) -> MarkerObservation {
    match project(p_cam, cam) {
        Ok(center) => MarkerObservation::new(center, cam.focal_length * side_m / p_cam.z),
        Err(_) => MarkerObservation::not_visible(),
    }
}

/// Inclusive pixel index range lit by the interval `[lo, hi)` in centred
/// coordinates, clipped to `[0, n)`. `None` when empty.
fn lit_range(lo: f64, hi: f64, n: u32) -> Option<(i64, i64)> {
    let half = n as f64 / 2.0;
    let limit = n as f64 + 2.0;
    let first = (lo - 0.5 + half).clamp(-limit, limit).ceil() as i64;
    let last = (hi - 0.5 + half).clamp(-limit, limit).ceil() as i64 - 1;
    let first = first.max(0);
    let last = last.min(n as i64 - 1);
    (first <= last).then_some((first, last))
}

struct Footprint {
    cols: (i64, i64),
    rows: (i64, i64),
}

fn footprint(obs: &MarkerObservation, width: u32, height: u32) -> Option<Footprint> {
    if !obs.visible
        || !(obs.side > 0.0)
        || !obs.center.iter().all(|c| c.is_finite())
        || !obs.side.is_finite()
    {
        return None;
    }
    let half = obs.side / 2.0;
    let cols = lit_range(obs.center.x - half, obs.center.x + half, width)?;
    let rows = lit_range(obs.center.y - half, obs.center.y + half, height)?;
    Some(Footprint { cols, rows })
}

/// Axis-aligned bright square on a dark background, clipped at the borders.
pub fn render_marker(obs: &MarkerObservation, cam: &CameraModel, step: u64) -> Frame {
    let mut frame = Frame::filled(cam.width, cam.height, step, BACKGROUND_INTENSITY);
    if let Some(fp) = footprint(obs, cam.width, cam.height) {
        let w = cam.width as usize;
        for row in fp.rows.0..=fp.rows.1 {
            let base = row as usize * w;
            frame.pixels[base + fp.cols.0 as usize..=base + fp.cols.1 as usize]
                .fill(MARKER_INTENSITY);
        }
    }
    frame
}

fn centred(index_sum_over_count: f64, n: u32) -> f64 {
    index_sum_over_count + 0.5 - n as f64 / 2.0
}

fn summarise(
    area: usize,
    sum_col: u64,
    sum_row: u64,
    cols: (i64, i64),
    rows: (i64, i64),
    width: u32,
    height: u32,
) -> MarkerObservation {
    let w = (cols.1 - cols.0 + 1) as f64;
    let h = (rows.1 - rows.0 + 1) as f64;
    let side = (w + h) / 2.0;
    let touches =
        cols.0 == 0 || rows.0 == 0 || cols.1 == width as i64 - 1 || rows.1 == height as i64 - 1;
    if area < MIN_MARKER_AREA || !(side > MIN_MARKER_SIDE) || touches {
        return MarkerObservation::not_visible();
    }
    let cx = centred(sum_col as f64 / area as f64, width);
    let cy = centred(sum_row as f64 / area as f64, height);
    MarkerObservation::new(Vector2::new(cx, cy), side)
}

/// Thresholds the frame, keeps the largest 4-connected bright component and
/// reports its centroid and mean bounding-box side. Ties go to the component
/// reaching lower in the image, then to the one further left.
pub fn detect_marker(frame: &Frame) -> MarkerObservation {
    let (w, h) = (frame.width as usize, frame.height as usize);
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    // (area, bottom row, left col, sum_col, sum_row, cols, rows)
    let mut best: Option<(usize, i64, i64, u64, u64, (i64, i64), (i64, i64))> = None;
    for start in 0..w * h {
        if seen[start] || frame.pixels[start] < DETECTION_THRESHOLD {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut area, mut sc, mut sr) = (0usize, 0u64, 0u64);
        let (mut c0, mut c1, mut r0, mut r1) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
        while let Some(idx) = queue.pop_front() {
            let (c, r) = (idx % w, idx / w);
            area += 1;
            sc += c as u64;
            sr += r as u64;
            c0 = c0.min(c as i64);
            c1 = c1.max(c as i64);
            r0 = r0.min(r as i64);
            r1 = r1.max(r as i64);
            let mut visit = |n: usize| {
                if !seen[n] && frame.pixels[n] >= DETECTION_THRESHOLD {
                    seen[n] = true;
                    queue.push_back(n);
                }
            };
            if c > 0 {
                visit(idx - 1);
            }
            if c + 1 < w {
                visit(idx + 1);
            }
            if r > 0 {
                visit(idx - w);
            }
            if r + 1 < h {
                visit(idx + w);
            }
        }
        let better = match &best {
            None => true,
            Some((ba, bb, bl, ..)) => {
                area > *ba || (area == *ba && (r1 > *bb || (r1 == *bb && c0 < *bl)))
            }
        };
        if better {
            best = Some((area, r1, c0, sc, sr, (c0, c1), (r0, r1)));
        }
    }
    match best {
        Some((area, _, _, sc, sr, cols, rows)) => {
            summarise(area, sc, sr, cols, rows, frame.width, frame.height)
        }
        None => MarkerObservation::not_visible(),
    }
}

/// Equivalent to `detect_marker(&render_marker(obs, cam, _))` without
/// materialising the frame. Results are bitwise identical.
pub fn rasterize(obs: &MarkerObservation, cam: &CameraModel) -> MarkerObservation {
    let Some(fp) = footprint(obs, cam.width, cam.height) else {
        return MarkerObservation::not_visible();
    };
    let w = (fp.cols.1 - fp.cols.0 + 1) as u64;
    let h = (fp.rows.1 - fp.rows.0 + 1) as u64;
    let area = (w * h) as usize;
    // column-index sum over a w x h block is h * w * (c0 + c1) / 2
    let sum_col = h * (w * (fp.cols.0 + fp.cols.1) as u64 / 2);
    let sum_row = w * (h * (fp.rows.0 + fp.rows.1) as u64 / 2);
    summarise(
        area, sum_col, sum_row, fp.cols, fp.rows, cam.width, cam.height,
    )
}

/// Camera-frame marker position from a visible observation and the known
/// physical side `side_m`.
pub fn estimate_relative_position(
    obs: &MarkerObservation,
    cam: &CameraModel,
    side_m: f64,
) -> Result<Vector3<f64>, PerceptionError> {
    if !obs.visible || !(obs.side > 0.0) {
        return Err(PerceptionError::NotVisible);
    }
    let z = cam.focal_length * side_m / obs.side;
    Ok(Vector3::new(
        obs.center.x * z / cam.focal_length,
        obs.center.y * z / cam.focal_length,
        z,
    ))
}

/// Worst-case relative-position error from one pixel of quantisation at depth `z`.
pub fn quantization_error_bound(z: f64, cam: &CameraModel, side_m: f64) -> f64 {
    2.0 * z * z / (cam.focal_length * side_m) + 0.01
}

/// First-order covariance of [`estimate_relative_position`] given pixel-level
/// standard deviations on the centre coordinates and on the side length.
pub fn relative_position_covariance(
    obs: &MarkerObservation,
    cam: &CameraModel,
    side_m: f64,
    center_std: f64,
    side_std: f64,
) -> Matrix3<f64> {
    let f = cam.focal_length;
    let z = f * side_m / obs.side;
    let dz_ds = -z / obs.side;
    // rows: X, Y, Z; columns: cx, cy, side
    let g = Matrix3::new(
        z / f,
        0.0,
        obs.center.x / f * dz_ds,
        0.0,
        z / f,
        obs.center.y / f * dz_ds,
        0.0,
        0.0,
        dz_ds,
    );
    let d = Matrix3::from_diagonal(&Vector3::new(
        center_std.powi(2),
        center_std.powi(2),
        side_std.powi(2),
    ));
    g * d * g.transpose()
}
