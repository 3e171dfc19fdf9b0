//! Scalar-loop reference renderer.
//!
//! Written independently of `rendering`: its own box clipping, coordinate
//! mapping, interpolation and compositing, a finer step, no early stop and
//! no occupancy mask. It is used to synthesize ground-truth images and as a
//! test oracle, so it favors plainness over speed.

use crate::camera::Camera;
use crate::contraction::CaptureMode;
use crate::error::{Error, Result};
use crate::image_io::Image;
use crate::rendering::RadianceField;

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSettings {
    /// Step in voxels of the field's grid.
    pub step_voxels: f64,
    pub background: [f64; 3],
    pub near: f64,
    pub far: f64,
}

impl Default for ReferenceSettings {
    fn default() -> Self {
        Self {
            step_voxels: 0.25,
            background: [1.0; 3],
            near: 0.05,
            far: 1e6,
        }
    }
}

fn lerp_grid(data: &[f64], res: [usize; 3], channels: usize, ch: usize, q: [f64; 3]) -> f64 {
    let mut base = [0usize; 3];
    let mut frac = [0f64; 3];
    for a in 0..3 {
        let n = res[a];
        let u = q[a].clamp(0.0, 1.0) * (n - 1) as f64;
        let mut i = u.floor() as usize;
        if i > n - 2 {
            i = n - 2;
        }
        base[a] = i;
        frac[a] = u - i as f64;
    }
    let mut acc = 0.0;
    for dx in 0..2 {
        for dy in 0..2 {
            for dz in 0..2 {
                let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
                let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
                let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
                let idx = ((base[0] + dx) * res[1] + (base[1] + dy)) * res[2] + (base[2] + dz);
                acc += wx * wy * wz * data[idx * channels + ch];
            }
        }
    }
    acc
}

/// `(t_enter, t_exit)` of the ray against the box, or `None`.
fn clip_box(
    o: [f64; 3],
    d: [f64; 3],
    lo: [f64; 3],
    hi: [f64; 3],
    near: f64,
    far: f64,
) -> Option<(f64, f64)> {
    let mut enter = near;
    let mut exit = far;
    for a in 0..3 {
        if d[a].abs() < 1e-300 {
            if o[a] < lo[a] || o[a] > hi[a] {
                return None;
            }
        } else {
            let t_lo = (lo[a] - o[a]) / d[a];
            let t_hi = (hi[a] - o[a]) / d[a];
            enter = enter.max(t_lo.min(t_hi));
            exit = exit.min(t_lo.max(t_hi));
        }
    }
    if enter < exit {
        Some((enter, exit))
    } else {
        None
    }
}

fn aligned(field: &RadianceField, x: [f64; 3]) -> [f64; 3] {
    let a = &field.contraction.align;
    let y = [
        x[0] + a.translation[0],
        x[1] + a.translation[1],
        x[2] + a.translation[2],
    ];
    let mut out = [0.0; 3];
    for r in 0..3 {
        out[r] =
            a.scale * (a.rotation[r][0] * y[0] + a.rotation[r][1] * y[1] + a.rotation[r][2] * y[2]);
    }
    out
}

fn aligned_dir(field: &RadianceField, d: [f64; 3]) -> [f64; 3] {
    let a = &field.contraction.align;
    let mut out = [0.0; 3];
    for r in 0..3 {
        out[r] =
            a.scale * (a.rotation[r][0] * d[0] + a.rotation[r][1] * d[1] + a.rotation[r][2] * d[2]);
    }
    out
}

/// Unbounded warp into the cube `[-(1+b), 1+b]³`.
fn squash(x: [f64; 3], b: f64, p: f64) -> [f64; 3] {
    let n = if p.is_infinite() {
        x[0].abs().max(x[1].abs()).max(x[2].abs())
    } else {
        (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
    };
    if n <= 1.0 {
        return x;
    }
    let s = (1.0 + b - b / n) / n;
    [s * x[0], s * x[1], s * x[2]]
}

/// One ray: `(rgb, final transmittance)`.
pub fn reference_render_ray(
    field: &RadianceField,
    origin: [f64; 3],
    dir: [f64; 3],
    settings: &ReferenceSettings,
) -> ([f64; 3], f64) {
    let res = field.density.resolution();
    let dens = field.density.data();
    let col = field.color.data();
    let cfg = &field.contraction;
    let shift = ((1.0 - field.alpha_init).powf(-2.0) - 1.0).ln();

    // Collect (grid-normalized point, interval in base voxels) pairs.
    let mut samples: Vec<([f64; 3], f64)> = Vec::new();
    match cfg.mode {
        CaptureMode::Bounded => {
            let lo = cfg.aabb.min;
            let hi = cfg.aabb.max;
            let mut vox = f64::INFINITY;
            for a in 0..3 {
                vox = vox.min((hi[a] - lo[a]) / (res[a] - 1) as f64);
            }
            if let Some((t0, t1)) = clip_box(origin, dir, lo, hi, settings.near, settings.far) {
                let n = ((t1 - t0) / (settings.step_voxels * vox)).ceil().max(1.0) as usize;
                let h = (t1 - t0) / n as f64;
                for k in 0..n {
                    let t = t0 + (k as f64 + 0.5) * h;
                    let mut q = [0.0; 3];
                    for a in 0..3 {
                        q[a] = (origin[a] + t * dir[a] - lo[a]) / (hi[a] - lo[a]);
                    }
                    samples.push((q, h / field.base_voxel));
                }
            }
        }
        CaptureMode::Unbounded => {
            let o = aligned(field, origin);
            let d = aligned_dir(field, dir);
            let half = 1.0 + cfg.b;
            let mut vox = f64::INFINITY;
            for a in 0..3 {
                vox = vox.min(2.0 * half / (res[a] - 1) as f64);
            }
            let h = settings.step_voxels * vox;
            let pos = |t: f64| {
                squash(
                    [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]],
                    cfg.b,
                    cfg.p,
                )
            };
            let mut t = settings.near;
            let mut y = pos(t);
            for _ in 0..200_000 {
                if t >= settings.far {
                    break;
                }
                // local speed of the warped point, by a forward difference
                let e = 1e-7 * t.max(1.0);
                let y2 = pos(t + e);
                let speed =
                    ((y2[0] - y[0]).powi(2) + (y2[1] - y[1]).powi(2) + (y2[2] - y[2]).powi(2))
                        .sqrt()
                        / e;
                if !(speed > 1e-12) {
                    break;
                }
                let t_next = (t + h / speed).min(settings.far);
                let y_next = pos(t_next);
                let chord = ((y_next[0] - y[0]).powi(2)
                    + (y_next[1] - y[1]).powi(2)
                    + (y_next[2] - y[2]).powi(2))
                .sqrt();
                if !(chord > 1e-14) {
                    break;
                }
                let ym = pos(0.5 * (t + t_next));
                let q = [
                    (ym[0] + half) / (2.0 * half),
                    (ym[1] + half) / (2.0 * half),
                    (ym[2] + half) / (2.0 * half),
                ];
                samples.push((q, chord / field.base_voxel));
                t = t_next;
                y = y_next;
            }
        }
        CaptureMode::ForwardFacing => {
            let o = aligned(field, origin);
            let d = aligned_dir(field, dir);
            if d[2] < 0.0 {
                let vox = 1.0 / (res[2] - 1) as f64;
                let n = (1.0 / (settings.step_voxels * vox)).round() as usize;
                let du = 1.0 / n as f64;
                let u_near = 1.0 - cfg.near / (-(o[2] + settings.near * d[2])).max(cfg.near);
                for k in 0..n {
                    let u = (k as f64 + 0.5) * du;
                    if u < u_near {
                        continue;
                    }
                    let depth = cfg.near / (1.0 - u);
                    let t = (depth + o[2]) / -d[2];
                    let q = [
                        0.5 * ((o[0] + t * d[0]) / depth / cfg.ndc_extent[0] + 1.0),
                        0.5 * ((o[1] + t * d[1]) / depth / cfg.ndc_extent[1] + 1.0),
                        u,
                    ];
                    samples.push((q, du / field.base_voxel));
                }
            }
        }
    }

    let mut trans = 1.0;
    let mut rgb = [0.0; 3];
    for (q, interval) in samples {
        let raw = lerp_grid(dens, res, 1, 0, q) + shift;
        let sigma = if raw > 30.0 {
            raw
        } else {
            (1.0 + raw.exp()).ln()
        };
        let mut alpha = 1.0 - (-sigma * interval).exp();
        if alpha > 1.0 - 1e-6 {
            alpha = 1.0 - 1e-6;
        }
        for c in 0..3 {
            let logit = lerp_grid(col, res, 3, c, q);
            rgb[c] += trans * alpha / (1.0 + (-logit).exp());
        }
        trans *= 1.0 - alpha;
    }
    for c in 0..3 {
        rgb[c] += trans * settings.background[c];
    }
    (rgb, trans)
}

/// Renders every pixel of `camera` with [`reference_render_ray`].
pub fn reference_render(
    field: &RadianceField,
    camera: &Camera,
    settings: &ReferenceSettings,
) -> Result<Image> {
    camera.validate()?;
    if !(settings.step_voxels > 0.0) {
        return Err(Error::InvalidArgument(
            "reference step must be positive".into(),
        ));
    }
    let mut img = Image::new(camera.width, camera.height, 3);
    for j in 0..camera.height {
        for i in 0..camera.width {
            let d = camera.direction(i as f64, j as f64);
            let (rgb, _) = reference_render_ray(field, camera.origin(), d, settings);
            let o = (j * camera.width + i) * 3;
            img.data[o..o + 3].copy_from_slice(&rgb);
        }
    }
    Ok(img)
}
