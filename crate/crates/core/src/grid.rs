//! Dense voxel grids.
//!
//! A [`VoxelGrid`] stores `C` channels at every node of an `Nx × Ny × Nz`
//! lattice spanning an axis-aligned box. Values are laid out x-major:
//! `((x * Ny + y) * Nz + z) * C + c`. All sampling happens in
//! grid-normalized coordinates, where `[0, 1]³` maps onto the node lattice
//! (node `i` along an axis sits at `i / (N - 1)`).
//!
//! Gradients live in a [`GradBuffer`] with the same layout. The backward of
//! trilinear sampling is [`trilinear_scatter_grad`]; the total-variation
//! regularizer [`tv_add_grad`] never produces a loss value and only adds its
//! gradient into an existing buffer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in world units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let ok = (0..3).all(|k| min[k].is_finite() && max[k].is_finite() && min[k] < max[k]);
        if !ok {
            return Err(Error::InvalidGrid(format!(
                "degenerate aabb: min {min:?} must be < max {max:?} componentwise"
            )));
        }
        Ok(Self { min, max })
    }

    /// The cube `[-half, half]³`.
    pub fn centered_cube(half: f64) -> Result<Self> {
        Self::new([-half; 3], [half; 3])
    }

    pub fn unit() -> Self {
        Self {
            min: [0.0; 3],
            max: [1.0; 3],
        }
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    /// World point to grid-normalized coordinates (not clamped).
    #[inline]
    pub fn to_normalized(&self, p: [f64; 3]) -> [f64; 3] {
        let e = self.extent();
        [
            (p[0] - self.min[0]) / e[0],
            (p[1] - self.min[1]) / e[1],
            (p[2] - self.min[2]) / e[2],
        ]
    }

    #[inline]
    pub fn from_normalized(&self, q: [f64; 3]) -> [f64; 3] {
        let e = self.extent();
        [
            self.min[0] + q[0] * e[0],
            self.min[1] + q[1] * e[1],
            self.min[2] + q[2] * e[2],
        ]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

/// The eight lattice nodes surrounding a point and their blend weights.
#[derive(Clone, Copy, Debug)]
pub struct Corners {
    /// Node indices (not multiplied by the channel count).
    pub nodes: [usize; 8],
    pub weights: [f64; 8],
}

#[inline]
fn axis_cell(q: f64, n: usize) -> (usize, f64) {
    let u = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let i0 = (u.floor() as usize).min(n - 2);
    (i0, u - i0 as f64)
}

/// Trilinear corners for a normalized point; coordinates outside `[0, 1]`
/// are clamped to the boundary face.
#[inline]
pub fn trilinear_corners(resolution: [usize; 3], q: [f64; 3]) -> Corners {
    let [nx, ny, nz] = resolution;
    let (x0, fx) = axis_cell(q[0], nx);
    let (y0, fy) = axis_cell(q[1], ny);
    let (z0, fz) = axis_cell(q[2], nz);
    let base = (x0 * ny + y0) * nz + z0;
    let sx = ny * nz;
    let sy = nz;
    let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
    Corners {
        nodes: [
            base,
            base + 1,
            base + sy,
            base + sy + 1,
            base + sx,
            base + sx + 1,
            base + sx + sy,
            base + sx + sy + 1,
        ],
        weights: [
            gx * gy * gz,
            gx * gy * fz,
            gx * fy * gz,
            gx * fy * fz,
            fx * gy * gz,
            fx * gy * fz,
            fx * fy * gz,
            fx * fy * fz,
        ],
    }
}

/// Dense multi-channel voxel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    resolution: [usize; 3],
    channels: usize,
    aabb: Aabb,
    data: Vec<f64>,
}

fn check_resolution(resolution: [usize; 3], channels: usize) -> Result<()> {
    if resolution.iter().any(|&n| n < 2) {
        return Err(Error::InvalidGrid(format!(
            "every resolution component must be >= 2, got {resolution:?}"
        )));
    }
    if channels == 0 {
        return Err(Error::InvalidGrid("channel count must be >= 1".into()));
    }
    Ok(())
}

impl VoxelGrid {
    /// Grid filled with `init_value`.
    pub fn new(
        resolution: [usize; 3],
        channels: usize,
        aabb: Aabb,
        init_value: f64,
    ) -> Result<Self> {
        check_resolution(resolution, channels)?;
        Aabb::new(aabb.min, aabb.max)?;
        if !init_value.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "init value {init_value} is not finite"
            )));
        }
        let len = resolution.iter().product::<usize>() * channels;
        Ok(Self {
            resolution,
            channels,
            aabb,
            data: vec![init_value; len],
        })
    }

    pub fn from_data(
        resolution: [usize; 3],
        channels: usize,
        aabb: Aabb,
        data: Vec<f64>,
    ) -> Result<Self> {
        check_resolution(resolution, channels)?;
        Aabb::new(aabb.min, aabb.max)?;
        let len = resolution.iter().product::<usize>() * channels;
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "grid {resolution:?}x{channels} needs {len} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            resolution,
            channels,
            aabb,
            data,
        })
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn aabb(&self) -> &Aabb {
        &self.aabb
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn num_nodes(&self) -> usize {
        self.resolution.iter().product()
    }

    #[inline]
    pub fn node_index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.resolution[1] + y) * self.resolution[2] + z
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize, c: usize) -> f64 {
        self.data[self.node_index(x, y, z) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, c: usize, value: f64) {
        let i = self.node_index(x, y, z) * self.channels + c;
        self.data[i] = value;
    }

    /// Normalized position of node `(x, y, z)`.
    pub fn node_position(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let [nx, ny, nz] = self.resolution;
        [
            x as f64 / (nx - 1) as f64,
            y as f64 / (ny - 1) as f64,
            z as f64 / (nz - 1) as f64,
        ]
    }

    /// World-space node spacing along each axis.
    pub fn voxel_size(&self) -> [f64; 3] {
        let e = self.aabb.extent();
        [
            e[0] / (self.resolution[0] - 1) as f64,
            e[1] / (self.resolution[1] - 1) as f64,
            e[2] / (self.resolution[2] - 1) as f64,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Trilinear blend at one normalized point, written into `out` (length C).
    #[inline]
    pub fn sample_into(&self, q: [f64; 3], out: &mut [f64]) {
        let corners = trilinear_corners(self.resolution, q);
        self.blend_into(&corners, out);
    }

    #[inline]
    pub fn blend_into(&self, corners: &Corners, out: &mut [f64]) {
        let c = self.channels;
        out[..c].fill(0.0);
        for (&node, &w) in corners.nodes.iter().zip(&corners.weights) {
            let src = &self.data[node * c..node * c + c];
            for (o, v) in out.iter_mut().zip(src) {
                *o += w * v;
            }
        }
    }

    /// Samples `points` (grid-normalized) and returns an `M × C` row-major array.
    pub fn trilinear_sample(&self, points: &[[f64; 3]]) -> Vec<f64> {
        let c = self.channels;
        let mut out = vec![0.0; points.len() * c];
        out.par_chunks_mut(c)
            .zip(points.par_iter())
            .for_each(|(o, &q)| self.sample_into(q, o));
        out
    }

    /// Resamples onto a finer lattice over the same box.
    pub fn upscale(&self, new_resolution: [usize; 3]) -> Result<VoxelGrid> {
        if (0..3).any(|k| new_resolution[k] < self.resolution[k]) {
            return Err(Error::InvalidArgument(format!(
                "upscale from {:?} to {new_resolution:?} would shrink the grid",
                self.resolution
            )));
        }
        let mut out = VoxelGrid::new(new_resolution, self.channels, self.aabb, 0.0)?;
        let c = self.channels;
        let [_, ny, nz] = new_resolution;
        let slab = ny * nz * c;
        out.data
            .par_chunks_mut(slab)
            .enumerate()
            .for_each(|(x, chunk)| {
                for y in 0..ny {
                    for z in 0..nz {
                        let q = [
                            x as f64 / (new_resolution[0] - 1) as f64,
                            y as f64 / (ny - 1) as f64,
                            z as f64 / (nz - 1) as f64,
                        ];
                        let off = (y * nz + z) * c;
                        self.sample_into(q, &mut chunk[off..off + c]);
                    }
                }
            });
        Ok(out)
    }
}

/// Accumulated `∂L/∂(grid value)`, shaped like its grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBuffer {
    resolution: [usize; 3],
    channels: usize,
    data: Vec<f64>,
}

impl GradBuffer {
    pub fn for_grid(grid: &VoxelGrid) -> Self {
        Self {
            resolution: grid.resolution,
            channels: grid.channels,
            data: vec![0.0; grid.data.len()],
        }
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn zero(&mut self) {
        self.data.fill(0.0);
    }

    pub fn matches(&self, grid: &VoxelGrid) -> bool {
        self.resolution == grid.resolution && self.channels == grid.channels
    }

    fn ensure_matches(&self, grid: &VoxelGrid) -> Result<()> {
        if self.matches(grid) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "gradient {:?}x{} does not match grid {:?}x{}",
                self.resolution, self.channels, grid.resolution, grid.channels
            )))
        }
    }

    #[inline]
    pub(crate) fn scatter_corners(&mut self, corners: &Corners, upstream: &[f64]) {
        let c = self.channels;
        for (&node, &w) in corners.nodes.iter().zip(&corners.weights) {
            let dst = &mut self.data[node * c..node * c + c];
            for (d, u) in dst.iter_mut().zip(upstream) {
                *d += w * u;
            }
        }
    }
}

/// Adjoint of [`VoxelGrid::trilinear_sample`]: adds `upstream · weight` into
/// the eight corners of every point. Points are accumulated in order, so the
/// result is deterministic.
pub fn trilinear_scatter_grad(
    grid_grad: &mut GradBuffer,
    points: &[[f64; 3]],
    upstream: &[f64],
) -> Result<()> {
    let c = grid_grad.channels;
    if upstream.len() != points.len() * c {
        return Err(Error::ShapeMismatch(format!(
            "{} points with {c} channels need {} upstream values, got {}",
            points.len(),
            points.len() * c,
            upstream.len()
        )));
    }
    for (q, u) in points.iter().zip(upstream.chunks_exact(c)) {
        if u.iter().all(|&v| v == 0.0) {
            continue;
        }
        let corners = trilinear_corners(grid_grad.resolution, *q);
        grid_grad.scatter_corners(&corners, u);
    }
    Ok(())
}

/// Nodes touched by the current iteration, used by sparse-mode TV.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActiveSet {
    resolution: [usize; 3],
    active: Vec<bool>,
}

impl ActiveSet {
    pub fn empty(resolution: [usize; 3]) -> Self {
        Self {
            resolution,
            active: vec![false; resolution.iter().product()],
        }
    }

    pub fn all(resolution: [usize; 3]) -> Self {
        Self {
            resolution,
            active: vec![true; resolution.iter().product()],
        }
    }

    /// Nodes with a non-zero gradient in any channel.
    pub fn from_grad(grad: &GradBuffer) -> Self {
        let c = grad.channels;
        let active = grad
            .data
            .par_chunks(c)
            .map(|g| g.iter().any(|&v| v != 0.0))
            .collect();
        Self {
            resolution: grad.resolution,
            active,
        }
    }

    pub fn insert(&mut self, node: usize) {
        self.active[node] = true;
    }

    pub fn contains(&self, node: usize) -> bool {
        self.active[node]
    }

    pub fn len(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.active.iter().any(|&a| a)
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }
}

/// Huber penalty with transition point `delta`.
#[inline]
pub fn huber(d: f64, delta: f64) -> f64 {
    let a = d.abs();
    if a <= delta {
        0.5 * d * d
    } else {
        delta * (a - 0.5 * delta)
    }
}

#[inline]
pub fn huber_grad(d: f64, delta: f64) -> f64 {
    if d.abs() <= delta {
        d
    } else {
        delta * d.signum()
    }
}

/// Huber total-variation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TotalVariation {
    pub weight: f64,
    pub huber_delta: f64,
}

impl TotalVariation {
    pub fn new(weight: f64) -> Self {
        Self {
            weight,
            huber_delta: 1.0,
        }
    }
}

/// Counters reported by [`tv_add_grad`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TvStats {
    /// Distinct neighbor pairs whose penalty contributed a gradient.
    pub pairs_evaluated: usize,
}

/// Number of axis-neighbor pairs in a lattice.
pub fn neighbor_pair_count(resolution: [usize; 3]) -> usize {
    let [nx, ny, nz] = resolution;
    (nx - 1) * ny * nz + nx * (ny - 1) * nz + nx * ny * (nz - 1)
}

/// Adds `weight · ∂TV/∂v` into `grid_grad`, where TV is the mean over all
/// axis-neighbor pairs of `huber(vᵢ - vⱼ)`, summed over channels.
///
/// In sparse mode only pairs with at least one endpoint in `active` add a
/// gradient; the normalizer is still the full pair count, so both modes agree
/// when every node is active.
pub fn tv_add_grad(
    grid: &VoxelGrid,
    grid_grad: &mut GradBuffer,
    tv: &TotalVariation,
    dense_mode: bool,
    active: &ActiveSet,
) -> Result<TvStats> {
    if !(tv.weight >= 0.0) || !tv.weight.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "tv weight must be >= 0, got {}",
            tv.weight
        )));
    }
    if !(tv.huber_delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "huber delta must be > 0, got {}",
            tv.huber_delta
        )));
    }
    grid_grad.ensure_matches(grid)?;
    if !dense_mode && active.resolution != grid.resolution {
        return Err(Error::ShapeMismatch(format!(
            "active set {:?} does not match grid {:?}",
            active.resolution, grid.resolution
        )));
    }
    if tv.weight == 0.0 {
        return Ok(TvStats::default());
    }

    let [nx, ny, nz] = grid.resolution;
    let c = grid.channels;
    let scale = tv.weight / neighbor_pair_count(grid.resolution) as f64;
    let delta = tv.huber_delta;
    let strides = [ny * nz, nz, 1];
    let dims = [nx, ny, nz];

    let is_active = |node: usize| dense_mode || active.active[node];

    // touched = active nodes plus their 6-neighborhood
    let touched: Option<Vec<bool>> = (!dense_mode).then(|| {
        let mut t = active.active.clone();
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    let n = (x * ny + y) * nz + z;
                    if !active.active[n] {
                        continue;
                    }
                    let pos = [x, y, z];
                    for axis in 0..3 {
                        if pos[axis] > 0 {
                            t[n - strides[axis]] = true;
                        }
                        if pos[axis] + 1 < dims[axis] {
                            t[n + strides[axis]] = true;
                        }
                    }
                }
            }
        }
        t
    });

    if touched.as_ref().is_some_and(|t| !t.iter().any(|&b| b)) {
        return Ok(TvStats::default());
    }

    let data = &grid.data;
    let slab = ny * nz * c;
    let pairs: usize = grid_grad
        .data
        .par_chunks_mut(slab)
        .enumerate()
        .map(|(x, gchunk)| {
            let mut pairs = 0usize;
            for y in 0..ny {
                for z in 0..nz {
                    let n = (x * ny + y) * nz + z;
                    if let Some(t) = &touched {
                        if !t[n] {
                            continue;
                        }
                    }
                    let pos = [x, y, z];
                    let self_active = is_active(n);
                    let gout = &mut gchunk[(y * nz + z) * c..(y * nz + z + 1) * c];
                    for axis in 0..3 {
                        // neighbors in fixed order: minus side, then plus side
                        let lo = (pos[axis] > 0).then(|| n - strides[axis]);
                        let hi = (pos[axis] + 1 < dims[axis]).then(|| n + strides[axis]);
                        for (m, is_plus) in [(lo, false), (hi, true)] {
                            let Some(m) = m else { continue };
                            let m_active = is_active(m);
                            if !(self_active || m_active) {
                                continue;
                            }
                            // count each pair once, from its lower-index endpoint
                            if is_plus {
                                pairs += 1;
                            }
                            for ch in 0..c {
                                let d = data[n * c + ch] - data[m * c + ch];
                                gout[ch] += scale * huber_grad(d, delta);
                            }
                        }
                    }
                }
            }
            pairs
        })
        .sum();

    Ok(TvStats {
        pairs_evaluated: pairs,
    })
}

/// Explicit TV value (mean Huber over neighbor pairs, summed over channels).
/// Used as the reference for gradient checks and for logging.
pub fn tv_value(grid: &VoxelGrid, huber_delta: f64) -> f64 {
    let [nx, ny, nz] = grid.resolution;
    let c = grid.channels;
    let mut sum = 0.0;
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                for ch in 0..c {
                    let v = grid.get(x, y, z, ch);
                    if x + 1 < nx {
                        sum += huber(v - grid.get(x + 1, y, z, ch), huber_delta);
                    }
                    if y + 1 < ny {
                        sum += huber(v - grid.get(x, y + 1, z, ch), huber_delta);
                    }
                    if z + 1 < nz {
                        sum += huber(v - grid.get(x, y, z + 1, ch), huber_delta);
                    }
                }
            }
        }
    }
    sum / neighbor_pair_count(grid.resolution) as f64
}
