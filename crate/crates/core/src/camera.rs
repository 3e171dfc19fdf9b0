//! Pinhole cameras in the `transforms.json` convention: camera-to-world
//! poses, camera looking down `-z` with `+y` up, pixel `(i, j)` mapped to the
//! direction `((i - cx)/fx, -(j - cy)/fy, -1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rendering::Ray;

/// Largest tolerated deviation of a pose rotation from orthonormality.
pub const POSE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub focal: [f64; 2],
    pub principal: [f64; 2],
    /// Row-major camera-to-world matrix.
    pub c2w: [[f64; 4]; 4],
}

/// Maximum entry of `RᵀR - I` for the upper-left 3×3 block of a pose.
pub fn pose_orthonormality_error(m: &[[f64; 4]; 4]) -> f64 {
    let mut err: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            err = err.max((dot - target).abs());
        }
    }
    let bottom = [m[3][0], m[3][1], m[3][2], m[3][3] - 1.0];
    for b in bottom {
        err = err.max(b.abs());
    }
    err
}

impl Camera {
    /// Camera with a centered principal point and square pixels.
    pub fn new(width: usize, height: usize, focal: f64, c2w: [[f64; 4]; 4]) -> Self {
        Self {
            width,
            height,
            focal: [focal, focal],
            principal: [0.5 * width as f64, 0.5 * height as f64],
            c2w,
        }
    }

    /// Camera at `eye` looking at `target` with the given world up vector.
    pub fn look_at(
        width: usize,
        height: usize,
        focal: f64,
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
    ) -> Self {
        let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let cross = |a: [f64; 3], b: [f64; 3]| {
            [
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ]
        };
        let norm = |a: [f64; 3]| {
            let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            [a[0] / n, a[1] / n, a[2] / n]
        };
        // camera +z points away from the target
        let z = norm(sub(eye, target));
        let x = norm(cross(up, z));
        let y = cross(z, x);
        let c2w = [
            [x[0], y[0], z[0], eye[0]],
            [x[1], y[1], z[1], eye[1]],
            [x[2], y[2], z[2], eye[2]],
            [0.0, 0.0, 0.0, 1.0],
        ];
        Self::new(width, height, focal, c2w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument(format!(
                "camera size must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if self.focal.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "focal length must be positive, got {:?}",
                self.focal
            )));
        }
        if self.principal.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(
                "principal point must be finite".into(),
            ));
        }
        let err = pose_orthonormality_error(&self.c2w);
        if !(err <= POSE_TOLERANCE) {
            return Err(Error::InvalidArgument(format!(
                "camera pose is not rigid (error {err:e})"
            )));
        }
        Ok(())
    }

    pub fn origin(&self) -> [f64; 3] {
        [self.c2w[0][3], self.c2w[1][3], self.c2w[2][3]]
    }

    /// Unit viewing direction (camera `-z` axis) in world space.
    pub fn forward(&self) -> [f64; 3] {
        [-self.c2w[0][2], -self.c2w[1][2], -self.c2w[2][2]]
    }

    /// Unit world direction through pixel coordinates `(px, py)`.
    pub fn direction(&self, px: f64, py: f64) -> [f64; 3] {
        let dc = [
            (px - self.principal[0]) / self.focal[0],
            -(py - self.principal[1]) / self.focal[1],
            -1.0,
        ];
        let m = &self.c2w;
        let d = [
            m[0][0] * dc[0] + m[0][1] * dc[1] + m[0][2] * dc[2],
            m[1][0] * dc[0] + m[1][1] * dc[1] + m[1][2] * dc[2],
            m[2][0] * dc[0] + m[2][1] * dc[1] + m[2][2] * dc[2],
        ];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        [d[0] / n, d[1] / n, d[2] / n]
    }

    /// Ray through pixel `(i, j)`.
    pub fn pixel_ray(&self, i: usize, j: usize, near: f64, far: f64) -> Ray {
        Ray {
            origin: self.origin(),
            direction: self.direction(i as f64, j as f64),
            near,
            far,
        }
    }

    /// Same pose, image scaled by `factor` (focal and principal point follow).
    pub fn scaled(&self, factor: usize) -> Self {
        let f = factor as f64;
        Self {
            width: self.width * factor,
            height: self.height * factor,
            focal: [self.focal[0] * f, self.focal[1] * f],
            principal: [self.principal[0] * f, self.principal[1] * f],
            c2w: self.c2w,
        }
    }
}
