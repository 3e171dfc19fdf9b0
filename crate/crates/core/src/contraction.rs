//! Scene parameterizations: world points to grid-normalized coordinates.
//!
//! * `Bounded`: affine map of the scene box onto `[0, 1]³`.
//! * `ForwardFacing`: points are expressed in a reference camera frame and
//!   warped to `(x/d, y/d, 1 - near/d)` for depth `d`. Depth layers sit at
//!   fixed inverse depths, and straight world rays stay straight after the
//!   warp because the map is projective.
//! * `Unbounded`: after a rigid alignment, points outside the unit `p`-norm
//!   ball are squashed into a shell of thickness `b`:
//!   `x' = (1 + b - b/‖x‖ₚ) · x/‖x‖ₚ`. The cube `[-(1+b), 1+b]³` then maps
//!   onto `[0, 1]³`.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Aabb;

type Vec3 = Vector3<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptureMode {
    Bounded,
    ForwardFacing,
    Unbounded,
}

/// `x ↦ scale · R · (x + translation)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub scale: f64,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alignment scale must be > 0, got {}",
                self.scale
            )));
        }
        let r = self.rotation_matrix();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "alignment rotation is not orthonormal (error {err:e})"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        let t = self.translation;
        let x = [p[0] + t[0], p[1] + t[1], p[2] + t[2]];
        let v = self.apply_vector(x);
        [v[0], v[1], v[2]]
    }

    /// Rotates and scales a direction (no translation).
    #[inline]
    pub fn apply_vector(&self, d: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let s = self.scale;
        [
            s * (r[0][0] * d[0] + r[0][1] * d[1] + r[0][2] * d[2]),
            s * (r[1][0] * d[0] + r[1][1] * d[1] + r[1][2] * d[2]),
            s * (r[2][0] * d[0] + r[2][1] * d[1] + r[2][2] * d[2]),
        ]
    }

    pub fn inverse_point(&self, q: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let s = self.scale;
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = (r[0][i] * q[0] + r[1][i] * q[1] + r[2][i] * q[2]) / s - self.translation[i];
        }
        out
    }
}

/// Norm order used by the unbounded contraction.
#[inline]
pub fn p_norm(x: [f64; 3], p: f64) -> f64 {
    if p.is_infinite() {
        x[0].abs().max(x[1].abs()).max(x[2].abs())
    } else {
        (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
    }
}

/// Unbounded contraction in aligned coordinates (before the cube mapping).
#[inline]
pub fn contract_unbounded(x: [f64; 3], b: f64, p: f64) -> [f64; 3] {
    let n = p_norm(x, p);
    if n <= 1.0 {
        return x;
    }
    let scale = (1.0 + b - b / n) / n;
    [x[0] * scale, x[1] * scale, x[2] * scale]
}

/// Inverse of [`contract_unbounded`] for points strictly inside the shell.
pub fn uncontract_unbounded(y: [f64; 3], b: f64, p: f64) -> Option<[f64; 3]> {
    let r = p_norm(y, p);
    if r <= 1.0 {
        return Some(y);
    }
    if r >= 1.0 + b {
        return None;
    }
    // r = 1 + b - b/n  =>  n = b / (1 + b - r)
    let n = b / (1.0 + b - r);
    let s = n / r;
    Some([y[0] * s, y[1] * s, y[2] * s])
}

fn default_b() -> f64 {
    1.0
}

fn default_p() -> f64 {
    f64::INFINITY
}

fn default_layers() -> usize {
    256
}

fn default_near() -> f64 {
    1.0
}

fn default_extent() -> [f64; 2] {
    [1.0, 1.0]
}

fn default_aabb() -> Aabb {
    Aabb {
        min: [-1.5; 3],
        max: [1.5; 3],
    }
}

/// Parameterization settings. In forward-facing mode `align` maps world
/// points into the reference camera frame (camera looking down `-z`) and
/// `ndc_extent` holds the half-ranges of `x/d` and `y/d` covered by the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionConfig {
    pub mode: CaptureMode,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_aabb")]
    pub aabb: Aabb,
    #[serde(default = "default_extent")]
    pub ndc_extent: [f64; 2],
    #[serde(default)]
    pub align: RigidTransform,
}

impl ContractionConfig {
    pub fn bounded(aabb: Aabb) -> Self {
        Self {
            mode: CaptureMode::Bounded,
            b: default_b(),
            p: default_p(),
            num_layers: default_layers(),
            near: default_near(),
            aabb,
            ndc_extent: default_extent(),
            align: RigidTransform::identity(),
        }
    }

    pub fn unbounded(b: f64, p: f64, align: RigidTransform) -> Self {
        Self {
            mode: CaptureMode::Unbounded,
            b,
            p,
            align,
            ..Self::bounded(default_aabb())
        }
    }

    pub fn forward_facing(
        num_layers: usize,
        near: f64,
        ndc_extent: [f64; 2],
        align: RigidTransform,
    ) -> Self {
        Self {
            mode: CaptureMode::ForwardFacing,
            num_layers,
            near,
            ndc_extent,
            align,
            ..Self::bounded(default_aabb())
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.align.validate()?;
        match self.mode {
            CaptureMode::Bounded => {
                Aabb::new(self.aabb.min, self.aabb.max)?;
            }
            CaptureMode::Unbounded => {
                if !(self.b > 0.0) || !self.b.is_finite() {
                    return Err(Error::Config(format!(
                        "contraction.b must be > 0, got {}",
                        self.b
                    )));
                }
                if !(self.p == 2.0 || self.p == f64::INFINITY) {
                    return Err(Error::Config(format!(
                        "contraction.p must be 2 or inf, got {}",
                        self.p
                    )));
                }
            }
            CaptureMode::ForwardFacing => {
                if self.num_layers < 2 {
                    return Err(Error::Config("contraction.num_layers must be >= 2".into()));
                }
                if !(self.near > 0.0) {
                    return Err(Error::Config(format!(
                        "contraction.near must be > 0, got {}",
                        self.near
                    )));
                }
                if self.ndc_extent.iter().any(|&e| !(e > 0.0)) {
                    return Err(Error::Config(
                        "contraction.ndc_extent must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// The box the density and color grids span, in marching-space units.
    pub fn grid_aabb(&self) -> Aabb {
        match self.mode {
            CaptureMode::Bounded => self.aabb,
            CaptureMode::Unbounded => {
                let h = 1.0 + self.b;
                Aabb {
                    min: [-h; 3],
                    max: [h; 3],
                }
            }
            CaptureMode::ForwardFacing => Aabb::unit(),
        }
    }
}

/// World point to grid-normalized coordinates in `[0, 1]³`.
#[inline]
pub fn contract(point: [f64; 3], cfg: &ContractionConfig) -> [f64; 3] {
    match cfg.mode {
        CaptureMode::Bounded => {
            let q = cfg.aabb.to_normalized(point);
            [
                q[0].clamp(0.0, 1.0),
                q[1].clamp(0.0, 1.0),
                q[2].clamp(0.0, 1.0),
            ]
        }
        CaptureMode::Unbounded => {
            let x = cfg.align.apply_point(point);
            let y = contract_unbounded(x, cfg.b, cfg.p);
            unbounded_to_normalized(y, cfg.b)
        }
        CaptureMode::ForwardFacing => {
            let x = cfg.align.apply_point(point);
            let depth = (-x[2]).max(cfg.near);
            ff_to_normalized([x[0] / depth, x[1] / depth, 1.0 - cfg.near / depth], cfg)
        }
    }
}

/// Contracted coordinates (cube of half-size `1 + b`) to `[0, 1]³`.
#[inline]
pub fn unbounded_to_normalized(y: [f64; 3], b: f64) -> [f64; 3] {
    let h = 1.0 + b;
    [
        ((y[0] + h) / (2.0 * h)).clamp(0.0, 1.0),
        ((y[1] + h) / (2.0 * h)).clamp(0.0, 1.0),
        ((y[2] + h) / (2.0 * h)).clamp(0.0, 1.0),
    ]
}

/// Warped `(x/d, y/d, u)` to `[0, 1]³`.
#[inline]
pub(crate) fn ff_to_normalized(w: [f64; 3], cfg: &ContractionConfig) -> [f64; 3] {
    [
        (0.5 * (w[0] / cfg.ndc_extent[0] + 1.0)).clamp(0.0, 1.0),
        (0.5 * (w[1] / cfg.ndc_extent[1] + 1.0)).clamp(0.0, 1.0),
        w[2].clamp(0.0, 1.0),
    ]
}

/// Inverse-depth layer coordinate: `u = 1 - near/depth`, so `u = 0` at the
/// near plane and `u → 1` at infinity.
pub fn forward_facing_warp(depth: f64, cfg: &ContractionConfig) -> Result<f64> {
    if !(depth >= cfg.near) {
        return Err(Error::InvalidArgument(format!(
            "depth {depth} is in front of the near plane {}",
            cfg.near
        )));
    }
    Ok(1.0 - cfg.near / depth)
}

/// Fractional layer index `u · (D - 1)`.
pub fn layer_index(u: f64, num_layers: usize) -> f64 {
    u * (num_layers - 1) as f64
}

/// Relative eigenvalue gap below which two PCA axes are treated as tied.
const PCA_TIE: f64 = 1e-9;

fn normalize(v: Vec3) -> Option<Vec3> {
    let n = v.norm();
    (n > 1e-12).then(|| v / n)
}

/// Rigid transform that centers camera positions on their centroid, rotates
/// their two leading principal axes onto world X and Y, and scales so every
/// near-plane point lies inside the unit ball.
///
/// `near_points` are camera centers pushed forward by their near distance;
/// when empty, the camera centers themselves are used. Axis signs are chosen
/// so each principal axis has a non-negative dot product with the world axis
/// it replaces; tied eigenvalues pick the in-plane basis closest to the world
/// axes.
pub fn compute_alignment(
    positions: &[[f64; 3]],
    near_points: &[[f64; 3]],
) -> Result<RigidTransform> {
    if positions.len() < 3 {
        return Err(Error::DegenerateCameras(format!(
            "need at least 3 camera positions, got {}",
            positions.len()
        )));
    }
    let pts: Vec<Vec3> = positions
        .iter()
        .map(|p| Vec3::new(p[0], p[1], p[2]))
        .collect();
    let centroid = pts.iter().fold(Vec3::zeros(), |a, p| a + p) / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= pts.len() as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let axis = |k: usize| -> Vec3 { eig.eigenvectors.column(order[k]).into_owned() };

    if !(lambda[0] > 0.0) || lambda[1] <= 1e-10 * lambda[0] {
        return Err(Error::DegenerateCameras(
            "camera positions are collinear or coincident".into(),
        ));
    }
    let tied = |a: f64, b: f64| (a - b).abs() <= PCA_TIE * lambda[0];
    let (ex, ey, ez) = (Vec3::x(), Vec3::y(), Vec3::z());
    let orient = |v: Vec3, reference: Vec3| -> Vec3 {
        let d = v.dot(&reference);
        if d < 0.0 {
            -v
        } else if d > 0.0 {
            v
        } else {
            // tie: first non-zero component positive
            let first = v.iter().copied().find(|c| c.abs() > 1e-15).unwrap_or(1.0);
            if first < 0.0 {
                -v
            } else {
                v
            }
        }
    };
    let project_onto_plane = |v: Vec3, normal: &Vec3| normalize(v - normal * normal.dot(&v));

    let (e1, e2) = if tied(lambda[0], lambda[1]) && tied(lambda[1], lambda[2]) {
        (ex, ey)
    } else if tied(lambda[0], lambda[1]) {
        let n = orient(axis(2), ez);
        let e1 = project_onto_plane(ex, &n)
            .or_else(|| project_onto_plane(ey, &n))
            .unwrap();
        (e1, n.cross(&e1))
    } else if tied(lambda[1], lambda[2]) {
        let e1 = orient(axis(0), ex);
        let e2 = project_onto_plane(ey, &e1)
            .or_else(|| project_onto_plane(ez, &e1))
            .unwrap();
        (e1, e2)
    } else {
        (orient(axis(0), ex), orient(axis(1), ey))
    };
    let e3 = e1.cross(&e2);
    let rotation = [[e1.x, e1.y, e1.z], [e2.x, e2.y, e2.z], [e3.x, e3.y, e3.z]];

    let cover: Vec<Vec3> = if near_points.is_empty() {
        pts.clone()
    } else {
        near_points
            .iter()
            .map(|p| Vec3::new(p[0], p[1], p[2]))
            .collect()
    };
    let radius = cover
        .iter()
        .map(|p| (p - centroid).norm())
        .fold(0.0, f64::max);
    if !(radius > 0.0) {
        return Err(Error::DegenerateCameras(
            "near-plane points coincide with the centroid".into(),
        ));
    }
    Ok(RigidTransform {
        rotation,
        translation: [-centroid.x, -centroid.y, -centroid.z],
        scale: 1.0 / radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unbounded_closed_forms() {
        assert_eq!(
            contract_unbounded([0.3, -0.2, 0.1], 1.0, 2.0),
            [0.3, -0.2, 0.1]
        );
        let y = contract_unbounded([2.0, 0.0, 0.0], 1.0, 2.0);
        assert!((y[0] - 1.5).abs() < 1e-15 && y[1] == 0.0 && y[2] == 0.0);
        let y = contract_unbounded([2.0, 1.0, 0.0], 1.0, f64::INFINITY);
        assert!((y[0] - 1.5).abs() < 1e-15 && (y[1] - 0.75).abs() < 1e-15 && y[2] == 0.0);
    }

    #[test]
    fn uncontract_inverts() {
        for p in [2.0, f64::INFINITY] {
            let x = [3.0, -7.0, 0.5];
            let y = contract_unbounded(x, 0.7, p);
            let back = uncontract_unbounded(y, 0.7, p).unwrap();
            for k in 0..3 {
                assert!((back[k] - x[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn contract_bounded_maps_box() {
        let cfg = ContractionConfig::bounded(Aabb::new([-1.0, 0.0, 2.0], [1.0, 4.0, 3.0]).unwrap());
        assert_eq!(contract([0.0, 1.0, 2.5], &cfg), [0.5, 0.25, 0.5]);
    }

    #[test]
    fn contract_unbounded_cube_mapping() {
        let cfg = ContractionConfig::unbounded(1.0, 2.0, RigidTransform::identity());
        assert_eq!(contract([0.0, 0.0, 0.0], &cfg), [0.5, 0.5, 0.5]);
        let q = contract([2.0, 0.0, 0.0], &cfg);
        assert!((q[0] - 3.5 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn forward_facing_layers() {
        let cfg =
            ContractionConfig::forward_facing(256, 2.0, [1.0, 1.0], RigidTransform::identity());
        assert_eq!(forward_facing_warp(2.0, &cfg).unwrap(), 0.0);
        assert_eq!(forward_facing_warp(4.0, &cfg).unwrap(), 0.5);
        assert!(forward_facing_warp(1.0, &cfg).is_err());
        assert_eq!(layer_index(1.0, 256), 255.0);
        let q = contract([0.0, 0.0, -4.0], &cfg);
        assert_eq!(q, [0.5, 0.5, 0.5]);
    }

    #[test]
    fn validate_rejects_bad_config() {
        let mut cfg = ContractionConfig::unbounded(0.0, 2.0, RigidTransform::identity());
        assert!(cfg.validate().is_err());
        cfg.b = 1.0;
        cfg.p = 3.0;
        assert!(cfg.validate().is_err());
        cfg.p = f64::INFINITY;
        assert!(cfg.validate().is_ok());
        cfg.align.scale = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn alignment_rejects_collinear() {
        let pts = [
            [0.0, 0.0, 0.0],
            [1.0, 1.0, 1.0],
            [2.0, 2.0, 2.0],
            [3.0, 3.0, 3.0],
        ];
        assert!(compute_alignment(&pts, &[]).is_err());
        assert!(compute_alignment(&pts[..2], &[]).is_err());
    }

    #[test]
    fn rigid_inverse_roundtrip() {
        let t = RigidTransform {
            rotation: [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [1.0, 2.0, 3.0],
            scale: 0.5,
        };
        let p = [0.3, -4.0, 9.0];
        let back = t.inverse_point(t.apply_point(p));
        for k in 0..3 {
            assert!((back[k] - p[k]).abs() < 1e-12);
        }
    }
}
