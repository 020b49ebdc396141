//! Pinhole camera rig mounted on the ego vehicle.
//!
//! Ego frame: +x right, +y forward, +z up, origin on the ground below the
//! rig centre. Camera frame: +x right, +y down, +z along the optical axis.

use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];
/// Row-major 3×3.
pub type Mat3 = [[f64; 3]; 3];

/// Projections closer than this to the image plane are rejected.
pub const MIN_DEPTH: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    /// Columns are the camera axes expressed in the ego frame (camera → ego).
    pub rotation: Mat3,
    /// Camera centre in the ego frame.
    pub translation: Vec3,
    pub rows: usize,
    pub cols: usize,
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

impl Camera {
    /// Camera looking along azimuth `azimuth` (radians clockwise from +y
    /// toward +x), pitched down by `pitch`, at `height` and `radius` from
    /// the rig centre.
    pub fn looking(azimuth: f64, pitch: f64, height: f64, radius: f64, rows: usize, cols: usize, hfov: f64) -> Self {
        let heading = [azimuth.sin(), azimuth.cos(), 0.0];
        let forward = [heading[0] * pitch.cos(), heading[1] * pitch.cos(), -pitch.sin()];
        let right = [azimuth.cos(), -azimuth.sin(), 0.0];
        let down = cross(forward, right);
        let rotation = [
            [right[0], down[0], forward[0]],
            [right[1], down[1], forward[1]],
            [right[2], down[2], forward[2]],
        ];
        let f = (cols as f64 / 2.0) / (hfov / 2.0).tan();
        Camera {
            intrinsics: Intrinsics { fx: f, fy: f, cx: cols as f64 / 2.0, cy: rows as f64 / 2.0 },
            rotation,
            translation: [radius * heading[0], radius * heading[1], height],
            rows,
            cols,
        }
    }

    fn axis(&self, k: usize) -> Vec3 {
        [self.rotation[0][k], self.rotation[1][k], self.rotation[2][k]]
    }

    /// Ego-frame point to camera frame.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let d = [p[0] - self.translation[0], p[1] - self.translation[1], p[2] - self.translation[2]];
        [dot(self.axis(0), d), dot(self.axis(1), d), dot(self.axis(2), d)]
    }

    /// Ego-frame ray direction through continuous pixel `(u, v)` (not normalised).
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        let k = &self.intrinsics;
        let c = [(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0];
        let r = &self.rotation;
        [dot(r[0], c), dot(r[1], c), dot(r[2], c)]
    }

    /// Intersects the ray through `(u, v)` with the ground plane `z = 0`.
    pub fn unproject_to_ground(&self, u: f64, v: f64) -> Option<Vec3> {
        let d = self.ray(u, v);
        if d[2] >= -1e-12 {
            return None;
        }
        let s = -self.translation[2] / d[2];
        Some([self.translation[0] + s * d[0], self.translation[1] + s * d[1], 0.0])
    }

    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0f64;
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(self.axis(i), self.axis(j)) - expect).abs());
            }
        }
        worst
    }
}

/// Pinhole projection of an ego-frame point to continuous pixel `(u, v)`.
/// `None` when the point is closer than [`MIN_DEPTH`] along the optical axis
/// or lands outside the image.
pub fn project_to_camera(p: Vec3, cam: &Camera) -> Option<(f64, f64)> {
    if !p.iter().all(|v| v.is_finite()) {
        return None;
    }
    let c = cam.to_camera(p);
    if c[2] <= MIN_DEPTH {
        return None;
    }
    let k = &cam.intrinsics;
    let u = k.fx * c[0] / c[2] + k.cx;
    let v = k.fy * c[1] / c[2] + k.cy;
    let inside = u >= 0.0 && v >= 0.0 && u < cam.cols as f64 && v < cam.rows as f64;
    inside.then_some((u, v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub cameras: Vec<Camera>,
}

pub const DEFAULT_CAMERAS: usize = 6;
pub const DEFAULT_HEIGHT: f64 = 1.6;
pub const DEFAULT_ROWS: usize = 64;
pub const DEFAULT_COLS: usize = 96;
pub const DEFAULT_PITCH_DEG: f64 = 10.0;
pub const DEFAULT_MOUNT_RADIUS: f64 = 0.5;

impl Default for CameraRig {
    fn default() -> Self {
        Self::ring(DEFAULT_CAMERAS, DEFAULT_ROWS, DEFAULT_COLS)
    }
}

impl CameraRig {
    /// `k` cameras at equal azimuth steps, 90° horizontal field of view.
    pub fn ring(k: usize, rows: usize, cols: usize) -> Self {
        let cameras = (0..k)
            .map(|i| {
                let az = std::f64::consts::TAU * i as f64 / k as f64;
                Camera::looking(
                    az,
                    DEFAULT_PITCH_DEG.to_radians(),
                    DEFAULT_HEIGHT,
                    DEFAULT_MOUNT_RADIUS,
                    rows,
                    cols,
                    std::f64::consts::FRAC_PI_2,
                )
            })
            .collect();
        CameraRig { cameras }
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}
