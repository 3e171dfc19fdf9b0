//! Capture datasets in the `transforms.json` convention, seeded synthetic
//! box scenes, and an independent reference renderer.
//!
//! Manifest schema (`transforms.json`):
//!
//! ```json
//! {
//!   "camera_angle_x": 0.8575,          // horizontal field of view, radians
//!   "mode": "bounded",                 // optional: bounded | forward_facing | unbounded
//!   "aabb": [[-1, -1, -1], [1, 1, 1]], // optional scene box
//!   "background": [1, 1, 1],           // optional, default white
//!   "frames": [
//!     {
//!       "file_path": "./train/r_000",  // relative, without ".png"
//!       "transform_matrix": [[...], [...], [...], [0, 0, 0, 1]],  // row-major camera-to-world
//!       "split": "train"               // optional: train | test
//!     }
//!   ]
//! }
//! ```
//!
//! Without a `split` key the loader looks for `transforms_train.json` and
//! `transforms_test.json`; failing that, every 8th frame is held out.

mod reference;
mod synthetic;

pub use reference::{reference_render, reference_render_ray, ReferenceSettings};
pub use synthetic::{gen_synthetic_scene, SceneSpec, SyntheticScene};

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{pose_orthonormality_error, Camera, POSE_TOLERANCE};
use crate::contraction::CaptureMode;
use crate::error::{Error, Result};
use crate::grid::Aabb;
use crate::image_io::{read_png_rgb, write_png, Image};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    /// Manifest `file_path` (relative, no extension).
    pub name: String,
    /// Row-major camera-to-world matrix.
    pub c2w: [[f64; 4]; 4],
    pub image: Image,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub width: usize,
    pub height: usize,
    pub camera_angle_x: f64,
    pub frames: Vec<Frame>,
    pub mode: CaptureMode,
    pub aabb: Option<Aabb>,
    pub background: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct ManifestFrame {
    file_path: String,
    transform_matrix: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    camera_angle_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mode: Option<CaptureMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aabb: Option<[[f64; 3]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    background: Option<[f64; 3]>,
    frames: Vec<ManifestFrame>,
}

/// `0.5·W / tan(0.5·camera_angle_x)`.
pub fn focal_from_angle(width: usize, camera_angle_x: f64) -> f64 {
    0.5 * width as f64 / (0.5 * camera_angle_x).tan()
}

impl SceneDataset {
    pub fn focal(&self) -> f64 {
        focal_from_angle(self.width, self.camera_angle_x)
    }

    pub fn camera(&self, frame: usize) -> Camera {
        Camera::new(
            self.width,
            self.height,
            self.focal(),
            self.frames[frame].c2w,
        )
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.frames.len())
            .filter(|&i| self.frames[i].split == split)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.camera_angle_x > 0.0 && self.camera_angle_x < std::f64::consts::PI) {
            return Err(Error::Dataset(format!(
                "camera_angle_x {} is not in (0, π)",
                self.camera_angle_x
            )));
        }
        for f in &self.frames {
            let err = pose_orthonormality_error(&f.c2w);
            if !(err <= POSE_TOLERANCE) {
                return Err(Error::Dataset(format!(
                    "frame '{}' has a non-rigid transform_matrix (orthonormality error {err:.3e})",
                    f.name
                )));
            }
            if (f.image.width, f.image.height, f.image.channels) != (self.width, self.height, 3) {
                return Err(Error::Dataset(format!(
                    "frame '{}' image is {}x{}x{}, expected {}x{}x3",
                    f.name,
                    f.image.width,
                    f.image.height,
                    f.image.channels,
                    self.width,
                    self.height
                )));
            }
        }
        if self.indices(Split::Test).is_empty() {
            return Err(Error::Dataset("dataset has no test frame".into()));
        }
        Ok(())
    }
}

fn parse_matrix(name: &str, m: &[Vec<f64>]) -> Result<[[f64; 4]; 4]> {
    if m.len() != 4 || m.iter().any(|r| r.len() != 4) {
        return Err(Error::Dataset(format!(
            "frame '{name}': transform_matrix must be 4x4"
        )));
    }
    let mut out = [[0.0; 4]; 4];
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Dataset(format!(
                    "frame '{name}': non-finite transform_matrix entry"
                )));
            }
            out[i][j] = v;
        }
    }
    Ok(out)
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.into(),
        reason: e.to_string(),
    })
}

/// Loads a dataset directory (or a manifest file path).
pub fn load_dataset(path: &Path) -> Result<SceneDataset> {
    let (dir, manifest_path) = if path.is_dir() {
        (path.to_path_buf(), path.join("transforms.json"))
    } else {
        (
            path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            path.to_path_buf(),
        )
    };

    let mut entries: Vec<(ManifestFrame, Option<Split>)> = Vec::new();
    let head = if manifest_path.exists() {
        let mut m = read_manifest(&manifest_path)?;
        entries.extend(m.frames.drain(..).map(|f| {
            let s = f.split;
            (f, s)
        }));
        m
    } else {
        let train = dir.join("transforms_train.json");
        let test = dir.join("transforms_test.json");
        if !train.exists() {
            return Err(Error::Dataset(format!(
                "no transforms.json or transforms_train.json in {}",
                dir.display()
            )));
        }
        let mut m = read_manifest(&train)?;
        entries.extend(m.frames.drain(..).map(|f| (f, Some(Split::Train))));
        if test.exists() {
            let t = read_manifest(&test)?;
            entries.extend(t.frames.into_iter().map(|f| (f, Some(Split::Test))));
        }
        m
    };
    if entries.is_empty() {
        return Err(Error::Dataset("manifest has no frames".into()));
    }
    let any_split = entries.iter().any(|(_, s)| s.is_some());

    let background = head.background.unwrap_or([1.0; 3]);
    let frames = entries
        .into_par_iter()
        .enumerate()
        .map(|(i, (f, split))| {
            let c2w = parse_matrix(&f.file_path, &f.transform_matrix)?;
            let img_path = dir.join(format!("{}.png", f.file_path));
            let image = read_png_rgb(&img_path, background)?;
            let split = match split {
                Some(s) => s,
                None if !any_split && i % 8 == 0 => Split::Test,
                None => Split::Train,
            };
            Ok(Frame {
                name: f.file_path,
                c2w,
                image,
                split,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let aabb = head.aabb.map(|[lo, hi]| Aabb::new(lo, hi)).transpose()?;
    let ds = SceneDataset {
        width: frames[0].image.width,
        height: frames[0].image.height,
        camera_angle_x: head.camera_angle_x,
        frames,
        mode: head.mode.unwrap_or(CaptureMode::Bounded),
        aabb,
        background,
    };
    ds.validate()?;
    Ok(ds)
}

/// Manifest path and row-major camera-to-world matrix of one frame.
pub type NamedPose = (String, [[f64; 4]; 4]);

/// Named camera-to-world poses plus the horizontal field of view, read from
/// a manifest whose images need not exist.
pub fn load_poses(path: &Path) -> Result<(f64, Vec<NamedPose>)> {
    let m = read_manifest(path)?;
    let mut poses = Vec::with_capacity(m.frames.len());
    for f in m.frames {
        let c2w = parse_matrix(&f.file_path, &f.transform_matrix)?;
        let err = pose_orthonormality_error(&c2w);
        if !(err <= POSE_TOLERANCE) {
            return Err(Error::Dataset(format!(
                "frame '{}' has a non-rigid transform_matrix",
                f.file_path
            )));
        }
        poses.push((f.file_path, c2w));
    }
    Ok((m.camera_angle_x, poses))
}

/// Writes `transforms.json` plus one PNG per frame under `<split>/`.
pub fn write_dataset(dir: &Path, ds: &SceneDataset) -> Result<()> {
    for sub in ["train", "test"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut frames = Vec::with_capacity(ds.frames.len());
    for f in &ds.frames {
        write_png(&dir.join(format!("{}.png", f.name)), &f.image)?;
        frames.push(ManifestFrame {
            file_path: f.name.clone(),
            transform_matrix: f.c2w.iter().map(|r| r.to_vec()).collect(),
            split: Some(f.split),
        });
    }
    let manifest = Manifest {
        camera_angle_x: ds.camera_angle_x,
        mode: Some(ds.mode),
        aabb: ds.aabb.map(|a| [a.min, a.max]),
        background: Some(ds.background),
        frames,
    };
    let path = dir.join("transforms.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_closed_form() {
        let f = focal_from_angle(100, std::f64::consts::FRAC_PI_2);
        assert!((f - 50.0).abs() < 1e-12);
    }
}
