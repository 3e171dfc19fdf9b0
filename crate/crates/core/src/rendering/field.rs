//! Explicit density + RGB grids and the fused per-ray render/backward.

use rayon::prelude::*;

use crate::camera::Camera;
use crate::contraction::{CaptureMode, ContractionConfig};
use crate::distortion::{ray_distloss, ray_distloss_grad, RaySampleBatch};
use crate::error::{Error, Result};
use crate::grid::{trilinear_corners, GradBuffer, VoxelGrid};
use crate::image_io::Image;
use crate::rendering::alpha::{alpha_shift, density_to_alpha, sigmoid, HALT_TRANSMITTANCE};
use crate::rendering::occupancy::OccupancyMask;
use crate::rendering::ray::Ray;
use crate::rendering::sampling::{RaySamples, Sampler};

/// Rays per parallel work item. Fixed so results do not depend on the
/// number of worker threads.
const RAY_CHUNK: usize = 128;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Step between samples in voxels of the current grid.
    pub step_size: f64,
    /// Transmittance below which a ray stops; `0` disables early stopping.
    pub halt_transmittance: f64,
    pub background: [f64; 3],
    pub near: f64,
    pub far: f64,
    /// Skip samples in free occupancy cells.
    pub use_occupancy: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            step_size: 0.5,
            halt_transmittance: HALT_TRANSMITTANCE,
            background: [1.0; 3],
            near: 0.05,
            far: 1e6,
            use_occupancy: true,
        }
    }
}

/// Per-ray render result.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RayOutput {
    pub rgb: [f64; 3],
    /// Transmittance left after compositing (before the background blend).
    pub transmittance: f64,
    /// `Σ wᵢ tᵢ` in world distance.
    pub depth: f64,
}

/// Losses of one training batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchLoss {
    /// Mean squared error over rays and channels.
    pub mse: f64,
    /// Mean per-ray distortion loss (unweighted).
    pub dist: f64,
    /// Samples that were interpolated and composited.
    pub samples: usize,
}

/// Dense voxel radiance field: raw density (softplus-activated) and RGB
/// logits (sigmoid-activated) on grids of equal resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct RadianceField {
    pub density: VoxelGrid,
    pub color: VoxelGrid,
    pub contraction: ContractionConfig,
    pub alpha_init: f64,
    /// Voxel edge of the initial grid in marching-space units.
    pub base_voxel: f64,
    pub occupancy: Option<OccupancyMask>,
}

fn marching_voxel(grid: &VoxelGrid, mode: CaptureMode) -> f64 {
    let v = grid.voxel_size();
    match mode {
        CaptureMode::ForwardFacing => v[2],
        _ => v[0].min(v[1]).min(v[2]),
    }
}

/// Per-thread scratch for tracing one ray.
#[derive(Default)]
struct Trace {
    samples: RaySamples,
    idx: Vec<usize>,
    alpha: Vec<f64>,
    dalpha: Vec<f64>,
    color: Vec<[f64; 3]>,
    weight: Vec<f64>,
    trans: Vec<f64>,
    // distortion scratch
    mid: Vec<f64>,
    len: Vec<f64>,
    dgrad: Vec<f64>,
}

impl Trace {
    fn clear(&mut self) {
        self.idx.clear();
        self.alpha.clear();
        self.dalpha.clear();
        self.color.clear();
        self.weight.clear();
        self.trans.clear();
    }

    fn fill_intervals(&mut self) {
        self.mid.clear();
        self.len.clear();
        for &i in &self.idx {
            let (m, l) = self.samples.interval(i);
            self.mid.push(m);
            self.len.push(l);
        }
    }
}

/// Gradient contribution of one sample, scattered after the parallel pass.
struct ScatterRecord {
    q: [f64; 3],
    d_density: f64,
    d_color: [f64; 3],
}

#[derive(Default)]
struct ChunkOut {
    records: Vec<ScatterRecord>,
    sq_err: f64,
    dist: f64,
    samples: usize,
}

impl RadianceField {
    /// Zero-initialized field; densities start at `alpha_init` per half voxel
    /// and colors at 0.5 gray. Forward-facing grids use `num_layers` along z.
    pub fn new(
        resolution: [usize; 3],
        contraction: ContractionConfig,
        alpha_init: f64,
    ) -> Result<Self> {
        contraction.validate()?;
        if !(alpha_init > 0.0 && alpha_init < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha_init must be in (0, 1), got {alpha_init}"
            )));
        }
        let mut resolution = resolution;
        if contraction.mode == CaptureMode::ForwardFacing {
            resolution[2] = contraction.num_layers;
        }
        let aabb = contraction.grid_aabb();
        let density = VoxelGrid::new(resolution, 1, aabb, 0.0)?;
        let color = VoxelGrid::new(resolution, 3, aabb, 0.0)?;
        let base_voxel = marching_voxel(&density, contraction.mode);
        Ok(Self {
            density,
            color,
            contraction,
            alpha_init,
            base_voxel,
            occupancy: None,
        })
    }

    pub fn from_grids(
        density: VoxelGrid,
        color: VoxelGrid,
        contraction: ContractionConfig,
        alpha_init: f64,
        base_voxel: f64,
    ) -> Result<Self> {
        contraction.validate()?;
        if density.channels() != 1 || color.channels() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected 1 density and 3 color channels, got {} and {}",
                density.channels(),
                color.channels()
            )));
        }
        if density.resolution() != color.resolution() || density.aabb() != color.aabb() {
            return Err(Error::ShapeMismatch(
                "density and color grids must share resolution and box".into(),
            ));
        }
        if density.aabb() != &contraction.grid_aabb() {
            return Err(Error::ShapeMismatch(format!(
                "grid box {:?} does not match the parameterization box {:?}",
                density.aabb(),
                contraction.grid_aabb()
            )));
        }
        if !(base_voxel > 0.0) {
            return Err(Error::InvalidArgument("base voxel must be positive".into()));
        }
        Ok(Self {
            density,
            color,
            contraction,
            alpha_init,
            base_voxel,
            occupancy: None,
        })
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.density.resolution()
    }

    pub fn alpha_shift(&self) -> f64 {
        alpha_shift(self.alpha_init)
    }

    /// Voxel edge of the current grid in marching-space units.
    pub fn marching_voxel(&self) -> f64 {
        marching_voxel(&self.density, self.contraction.mode)
    }

    pub fn sampler(&self, cfg: &RenderConfig) -> Sampler<'_> {
        Sampler {
            contraction: &self.contraction,
            step: cfg.step_size * self.marching_voxel(),
            base_voxel: self.base_voxel,
        }
    }

    /// Resamples both grids; the occupancy mask keeps its free cells.
    pub fn upscale(&mut self, resolution: [usize; 3]) -> Result<()> {
        self.density = self.density.upscale(resolution)?;
        self.color = self.color.upscale(resolution)?;
        if let Some(mask) = &self.occupancy {
            let res = OccupancyMask::for_grid(&self.density).resolution();
            self.occupancy = Some(mask.resampled(res));
        }
        Ok(())
    }

    /// Forward pass of one ray; fills `tr` with the composited samples.
    fn trace(&self, ray: &Ray, cfg: &RenderConfig, tr: &mut Trace) -> RayOutput {
        self.sampler(cfg).sample_into(ray, &mut tr.samples);
        tr.clear();
        let shift = self.alpha_shift();
        let res = self.density.resolution();
        let mask = if cfg.use_occupancy {
            self.occupancy.as_ref()
        } else {
            None
        };
        let dens = self.density.data();
        let col = self.color.data();

        let mut t = 1.0;
        let mut rgb = [0.0; 3];
        let mut depth = 0.0;
        for i in 0..tr.samples.len() {
            if t < cfg.halt_transmittance {
                break;
            }
            let q = tr.samples.points[i];
            if mask.is_some_and(|m| m.is_free(q)) {
                continue;
            }
            let corners = trilinear_corners(res, q);
            let mut raw = 0.0;
            let mut craw = [0.0; 3];
            for (&n, &wc) in corners.nodes.iter().zip(&corners.weights) {
                raw += wc * dens[n];
                craw[0] += wc * col[3 * n];
                craw[1] += wc * col[3 * n + 1];
                craw[2] += wc * col[3 * n + 2];
            }
            let (alpha, dalpha) = density_to_alpha(raw, shift, tr.samples.delta[i]);
            let c = [sigmoid(craw[0]), sigmoid(craw[1]), sigmoid(craw[2])];
            let w = t * alpha;
            for k in 0..3 {
                rgb[k] += w * c[k];
            }
            depth += w * tr.samples.t[i];
            tr.idx.push(i);
            tr.alpha.push(alpha);
            tr.dalpha.push(dalpha);
            tr.color.push(c);
            tr.weight.push(w);
            tr.trans.push(t);
            t *= 1.0 - alpha;
        }
        for k in 0..3 {
            rgb[k] += t * cfg.background[k];
        }
        RayOutput {
            rgb,
            transmittance: t,
            depth,
        }
    }

    /// Renders rays without gradients.
    pub fn render_rays(&self, rays: &[Ray], cfg: &RenderConfig) -> Vec<RayOutput> {
        rays.par_chunks(RAY_CHUNK)
            .flat_map_iter(|chunk| {
                let mut tr = Trace::default();
                chunk
                    .iter()
                    .map(|r| self.trace(r, cfg, &mut tr))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Renders rays and gathers the composited samples into a distortion
    /// batch (midpoints, lengths and weights of every processed sample).
    pub fn trace_batch(
        &self,
        rays: &[Ray],
        cfg: &RenderConfig,
    ) -> Result<(Vec<RayOutput>, RaySampleBatch)> {
        type Samples = (Vec<f64>, Vec<f64>, Vec<f64>);
        let per_chunk: Vec<(Vec<RayOutput>, Vec<Samples>)> = rays
            .par_chunks(RAY_CHUNK)
            .map(|chunk| {
                let mut tr = Trace::default();
                let mut outs = Vec::with_capacity(chunk.len());
                let mut samples = Vec::with_capacity(chunk.len());
                for r in chunk {
                    outs.push(self.trace(r, cfg, &mut tr));
                    tr.fill_intervals();
                    samples.push((tr.mid.clone(), tr.len.clone(), tr.weight.clone()));
                }
                (outs, samples)
            })
            .collect();
        let mut outputs = Vec::with_capacity(rays.len());
        let mut offsets = vec![0];
        let (mut m, mut l, mut w) = (Vec::new(), Vec::new(), Vec::new());
        for (outs, samples) in per_chunk {
            outputs.extend(outs);
            for (mm, ll, ww) in samples {
                m.extend(mm);
                l.extend(ll);
                w.extend(ww);
                offsets.push(m.len());
            }
        }
        Ok((outputs, RaySampleBatch::new(offsets, m, l, w)?))
    }

    /// Photometric + distortion forward and backward for a ray batch.
    ///
    /// Loss = mean squared error over rays and channels plus
    /// `dist_weight ·` mean per-ray distortion. Gradients are added into
    /// `grad_density` and `grad_color` in ray order.
    pub fn forward_backward(
        &self,
        rays: &[Ray],
        targets: &[[f64; 3]],
        cfg: &RenderConfig,
        dist_weight: f64,
        grad_density: &mut GradBuffer,
        grad_color: &mut GradBuffer,
    ) -> Result<BatchLoss> {
        if rays.len() != targets.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rays but {} targets",
                rays.len(),
                targets.len()
            )));
        }
        if !grad_density.matches(&self.density) || !grad_color.matches(&self.color) {
            return Err(Error::ShapeMismatch(
                "gradient buffers do not match the field".into(),
            ));
        }
        if rays.is_empty() {
            return Ok(BatchLoss::default());
        }
        let nrays = rays.len() as f64;
        let mse_scale = 2.0 / (3.0 * nrays);
        let dist_scale = dist_weight / nrays;
        let bg = cfg.background;

        let chunks: Vec<ChunkOut> = rays
            .par_chunks(RAY_CHUNK)
            .zip(targets.par_chunks(RAY_CHUNK))
            .map(|(rchunk, tchunk)| {
                let mut tr = Trace::default();
                let mut out = ChunkOut::default();
                for (ray, gt) in rchunk.iter().zip(tchunk) {
                    let res = self.trace(ray, cfg, &mut tr);
                    let n = tr.idx.len();
                    out.samples += n;
                    let diff = [res.rgb[0] - gt[0], res.rgb[1] - gt[1], res.rgb[2] - gt[2]];
                    out.sq_err += diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2];
                    let g = [
                        mse_scale * diff[0],
                        mse_scale * diff[1],
                        mse_scale * diff[2],
                    ];

                    tr.dgrad.clear();
                    tr.dgrad.resize(n, 0.0);
                    if dist_weight != 0.0 && n > 0 {
                        tr.fill_intervals();
                        out.dist += ray_distloss(&tr.mid, &tr.len, &tr.weight);
                        ray_distloss_grad(&tr.mid, &tr.len, &tr.weight, &mut tr.dgrad);
                    }

                    // suffix accumulation of Σ_{i>k} wᵢ eᵢ + T·(g·bg)
                    let mut acc = res.transmittance * (g[0] * bg[0] + g[1] * bg[1] + g[2] * bg[2]);
                    for k in (0..n).rev() {
                        let c = tr.color[k];
                        let w = tr.weight[k];
                        let a = tr.alpha[k];
                        let e = g[0] * c[0] + g[1] * c[1] + g[2] * c[2] + dist_scale * tr.dgrad[k];
                        let d_density =
                            (tr.trans[k] * e * (1.0 - a) - acc) * (tr.dalpha[k] / (1.0 - a));
                        let d_color = [
                            w * g[0] * c[0] * (1.0 - c[0]),
                            w * g[1] * c[1] * (1.0 - c[1]),
                            w * g[2] * c[2] * (1.0 - c[2]),
                        ];
                        acc += w * e;
                        out.records.push(ScatterRecord {
                            q: tr.samples.points[tr.idx[k]],
                            d_density,
                            d_color,
                        });
                    }
                }
                out
            })
            .collect();

        let res = self.density.resolution();
        let mut loss = BatchLoss::default();
        let mut sq_err = 0.0;
        let mut dist = 0.0;
        for chunk in &chunks {
            sq_err += chunk.sq_err;
            dist += chunk.dist;
            loss.samples += chunk.samples;
            for r in &chunk.records {
                let corners = trilinear_corners(res, r.q);
                if r.d_density != 0.0 {
                    grad_density.scatter_corners(&corners, std::slice::from_ref(&r.d_density));
                }
                if r.d_color != [0.0; 3] {
                    grad_color.scatter_corners(&corners, &r.d_color);
                }
            }
        }
        loss.mse = sq_err / (3.0 * nrays);
        loss.dist = dist / nrays;
        Ok(loss)
    }

    /// Renders a full image with depth and transmittance maps.
    pub fn render_image(&self, camera: &Camera, cfg: &RenderConfig) -> Result<RenderOutput> {
        camera.validate()?;
        let (w, h) = (camera.width, camera.height);
        let rays: Vec<Ray> = (0..h)
            .flat_map(|j| (0..w).map(move |i| (i, j)))
            .map(|(i, j)| camera.pixel_ray(i, j, cfg.near, cfg.far))
            .collect();
        let outs = self.render_rays(&rays, cfg);
        let mut rgb = Image::new(w, h, 3);
        let mut depth = Image::new(w, h, 1);
        let mut trans = Image::new(w, h, 1);
        for (p, o) in outs.iter().enumerate() {
            rgb.data[3 * p..3 * p + 3].copy_from_slice(&o.rgb);
            depth.data[p] = o.depth;
            trans.data[p] = o.transmittance;
        }
        Ok(RenderOutput {
            rgb,
            depth,
            transmittance: trans,
        })
    }
}

/// Image plus auxiliary per-pixel maps.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub rgb: Image,
    pub depth: Image,
    pub transmittance: Image,
}

/// Mean Shannon entropy (nats) of normalized compositing weights over rays
/// whose total weight is at least `min_mass`.
pub fn mean_weight_entropy(batch: &RaySampleBatch, min_mass: f64) -> f64 {
    let offsets = batch.ray_offsets();
    let w = batch.weights();
    let mut sum = 0.0;
    let mut count = 0usize;
    for win in offsets.windows(2) {
        let ws = &w[win[0]..win[1]];
        let total: f64 = ws.iter().sum();
        if total < min_mass || total <= 0.0 {
            continue;
        }
        let h: f64 = ws
            .iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| {
                let p = x / total;
                -p * p.ln()
            })
            .sum();
        sum += h;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}
