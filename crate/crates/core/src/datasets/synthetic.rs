//! Seeded synthetic scenes of soft-edged colored boxes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Frame, SceneDataset, Split};
use crate::camera::Camera;
use crate::contraction::{uncontract_unbounded, CaptureMode, ContractionConfig, RigidTransform};
use crate::datasets::reference::{reference_render, ReferenceSettings};
use crate::error::{Error, Result};
use crate::grid::{Aabb, VoxelGrid};
use crate::image_io::Image;
use crate::rendering::alpha::alpha_shift;
use crate::rendering::RadianceField;

/// Axis-aligned box with a flat color.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub center: [f64; 3],
    pub half: [f64; 3],
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    /// Ground-truth grid nodes per axis.
    pub resolution: usize,
    pub num_boxes: usize,
    pub train_views: usize,
    pub test_views: usize,
    pub width: usize,
    pub height: usize,
    /// `bounded` or `unbounded`.
    pub mode: CaptureMode,
    pub background: [f64; 3],
    pub camera_angle_x: f64,
    /// Camera distance from the origin.
    pub camera_radius: f64,
    /// Optical depth per ground-truth voxel inside a box.
    pub box_density: f64,
    /// Edge softness in ground-truth voxels.
    pub edge_width: f64,
    pub alpha_init: f64,
    /// Replaces the random boxes when set.
    pub boxes: Option<Vec<SceneBox>>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            resolution: 32,
            num_boxes: 3,
            train_views: 24,
            test_views: 4,
            width: 64,
            height: 64,
            mode: CaptureMode::Bounded,
            background: [1.0; 3],
            camera_angle_x: 0.8,
            camera_radius: 3.5,
            box_density: 4.0,
            edge_width: 1.0,
            alpha_init: 1e-4,
            boxes: None,
        }
    }
}

impl SceneSpec {
    /// Boxes beyond the unit ball, cameras near the center looking outward
    /// through the scene.
    pub fn unbounded() -> Self {
        Self {
            mode: CaptureMode::Unbounded,
            camera_angle_x: 1.3,
            camera_radius: 0.6,
            ..Self::default()
        }
    }
}

/// Ground truth plus the rendered dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub field: RadianceField,
    pub boxes: Vec<SceneBox>,
    pub dataset: SceneDataset,
}

const BOUNDED_HALF: f64 = 1.0;

fn random_boxes(rng: &mut ChaCha8Rng, spec: &SceneSpec) -> Vec<SceneBox> {
    let color = |rng: &mut ChaCha8Rng| {
        [
            rng.gen_range(0.1..0.85),
            rng.gen_range(0.1..0.85),
            rng.gen_range(0.1..0.85),
        ]
    };
    let mut boxes = Vec::with_capacity(spec.num_boxes);
    for k in 0..spec.num_boxes {
        let b = match spec.mode {
            CaptureMode::Unbounded if k == 0 => {
                let half = [
                    rng.gen_range(0.08..0.15),
                    rng.gen_range(0.08..0.15),
                    rng.gen_range(0.08..0.15),
                ];
                SceneBox {
                    center: [0.0; 3],
                    half,
                    color: color(rng),
                }
            }
            CaptureMode::Unbounded => {
                let az: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let el: f64 = rng.gen_range(-0.4..0.4);
                let r = rng.gen_range(1.4..2.6);
                let center = [
                    r * el.cos() * az.cos(),
                    r * el.cos() * az.sin(),
                    r * el.sin(),
                ];
                let half = [
                    rng.gen_range(0.2..0.4),
                    rng.gen_range(0.2..0.4),
                    rng.gen_range(0.2..0.4),
                ];
                SceneBox {
                    center,
                    half,
                    color: color(rng),
                }
            }
            _ => {
                let half = [
                    rng.gen_range(0.15..0.35),
                    rng.gen_range(0.15..0.35),
                    rng.gen_range(0.15..0.35),
                ];
                let mut center = [0.0; 3];
                for a in 0..3 {
                    let lim = 0.8 - half[a];
                    center[a] = rng.gen_range(-lim..lim);
                }
                SceneBox {
                    center,
                    half,
                    color: color(rng),
                }
            }
        };
        boxes.push(b);
    }
    boxes
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Soft indicator of a box, 1 deep inside and 0 far outside.
fn box_occupancy(b: &SceneBox, x: [f64; 3], softness: f64) -> f64 {
    (0..3)
        .map(|a| logistic((b.half[a] - (x[a] - b.center[a]).abs()) / softness))
        .product()
}

fn box_distance(b: &SceneBox, x: [f64; 3]) -> f64 {
    (0..3)
        .map(|a| ((x[a] - b.center[a]).abs() - b.half[a]).max(0.0).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `softplus⁻¹(y)` for `y > 0`.
fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Jittered azimuth strata with low-discrepancy elevations, so every side of
/// the scene is covered.
fn camera_positions(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Vec<[f64; 3]> {
    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    let phase: f64 = rng.gen();
    (0..n)
        .map(|k| {
            let az = std::f64::consts::TAU * (k as f64 + rng.gen::<f64>()) / n as f64;
            let el = -0.3 + 1.3 * (phase + k as f64 * GOLDEN).fract();
            [
                radius * el.cos() * az.cos(),
                radius * el.cos() * az.sin(),
                radius * el.sin(),
            ]
        })
        .collect()
}

/// Deterministic box scene for `seed`.
pub fn gen_synthetic_scene(seed: u64, spec: &SceneSpec) -> Result<SyntheticScene> {
    if spec.resolution < 2 || spec.width == 0 || spec.height == 0 {
        return Err(Error::InvalidArgument(
            "scene needs resolution >= 2 and non-empty images".into(),
        ));
    }
    if spec.train_views < 2 || spec.test_views < 1 {
        return Err(Error::InvalidArgument(
            "scene needs >= 2 train views and >= 1 test view".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (contraction, aabb) = match spec.mode {
        CaptureMode::Bounded => {
            let aabb = Aabb::centered_cube(BOUNDED_HALF)?;
            (ContractionConfig::bounded(aabb), Some(aabb))
        }
        CaptureMode::Unbounded => (
            ContractionConfig::unbounded(1.0, f64::INFINITY, RigidTransform::identity()),
            None,
        ),
        CaptureMode::ForwardFacing => {
            return Err(Error::InvalidArgument(
                "synthetic scenes are bounded or unbounded".into(),
            ));
        }
    };
    let boxes = match &spec.boxes {
        Some(b) => b.clone(),
        None => random_boxes(&mut rng, spec),
    };
    if let Some(aabb) = aabb {
        for (k, b) in boxes.iter().enumerate() {
            let inside = (0..3).all(|a| {
                b.center[a] - b.half[a] >= aabb.min[a] && b.center[a] + b.half[a] <= aabb.max[a]
            });
            if !inside {
                return Err(Error::InvalidArgument(format!(
                    "box {k} extends outside the scene box"
                )));
            }
        }
    }
    if let Some(k) = boxes
        .iter()
        .position(|b| b.color.iter().any(|c| !(*c > 0.0 && *c < 1.0)))
    {
        return Err(Error::InvalidArgument(format!(
            "box {k} color must be in (0, 1)"
        )));
    }

    let res = [spec.resolution; 3];
    let grid_box = contraction.grid_aabb();
    let mut density = VoxelGrid::new(res, 1, grid_box, 0.0)?;
    let mut color = VoxelGrid::new(res, 3, grid_box, 0.0)?;
    let voxel = density.voxel_size()[0];
    let shift = alpha_shift(spec.alpha_init);
    for x in 0..res[0] {
        for y in 0..res[1] {
            for z in 0..res[2] {
                let g = density.node_position(x, y, z);
                let (w, softness) = match spec.mode {
                    CaptureMode::Unbounded => {
                        match uncontract_unbounded(g, contraction.b, contraction.p) {
                            // softness follows the local stretch of the warp
                            Some(w) => {
                                let n = w[0].abs().max(w[1].abs()).max(w[2].abs()).max(1.0);
                                (w, spec.edge_width * voxel * n * n / contraction.b)
                            }
                            None => ([f64::INFINITY; 3], 1.0),
                        }
                    }
                    _ => (g, spec.edge_width * voxel),
                };
                let occ = if w[0].is_finite() {
                    boxes
                        .iter()
                        .map(|b| box_occupancy(b, w, softness))
                        .fold(0.0, f64::max)
                } else {
                    0.0
                };
                let sigma = (spec.box_density * occ).max(1e-8);
                density.set(x, y, z, 0, inverse_softplus(sigma) - shift);
                let nearest = boxes
                    .iter()
                    .min_by(|a, b| box_distance(a, w).total_cmp(&box_distance(b, w)));
                let c = nearest.map_or([0.5; 3], |b| b.color);
                for k in 0..3 {
                    color.set(x, y, z, k, (c[k] / (1.0 - c[k])).ln());
                }
            }
        }
    }
    let field = RadianceField::from_grids(density, color, contraction, spec.alpha_init, voxel)?;

    let focal = super::focal_from_angle(spec.width, spec.camera_angle_x);
    let settings = ReferenceSettings {
        background: spec.background,
        ..ReferenceSettings::default()
    };
    let mut frames = Vec::with_capacity(spec.train_views + spec.test_views);
    for (split, n) in [
        (Split::Train, spec.train_views),
        (Split::Test, spec.test_views),
    ] {
        for (k, eye) in camera_positions(&mut rng, n, spec.camera_radius)
            .into_iter()
            .enumerate()
        {
            let target = match spec.mode {
                // look past the origin so the view crosses the whole scene
                CaptureMode::Unbounded => [-eye[0], -eye[1], -eye[2]],
                _ => [0.0; 3],
            };
            let cam = Camera::look_at(spec.width, spec.height, focal, eye, target, [0.0, 0.0, 1.0]);
            let mut image = reference_render(&field, &cam, &settings)?;
            quantize(&mut image);
            let dir = if split == Split::Train {
                "train"
            } else {
                "test"
            };
            frames.push(Frame {
                name: format!("{dir}/r_{k:03}"),
                c2w: cam.c2w,
                image,
                split,
            });
        }
    }
    let dataset = SceneDataset {
        width: spec.width,
        height: spec.height,
        camera_angle_x: spec.camera_angle_x,
        frames,
        mode: spec.mode,
        aabb,
        background: spec.background,
    };
    dataset.validate()?;
    Ok(SyntheticScene {
        field,
        boxes,
        dataset,
    })
}

/// Rounds to 8-bit levels so images survive a PNG round trip unchanged.
fn quantize(img: &mut Image) {
    for v in &mut img.data {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
}
