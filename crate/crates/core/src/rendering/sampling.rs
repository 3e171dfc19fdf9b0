//! Per-ray sample placement.
//!
//! Every mode marches with a constant step in its own "marching space":
//! world units for bounded scenes, contracted coordinates for unbounded
//! scenes, and normalized inverse depth for forward-facing scenes. Alongside
//! the grid-normalized sample positions the sampler returns the interval
//! boundaries normalized to `[0, 1]`, which the distortion loss consumes.

use crate::contraction::ff_to_normalized;
use crate::contraction::{
    contract_unbounded, unbounded_to_normalized, CaptureMode, ContractionConfig,
};
use crate::rendering::ray::{ray_aabb_intersect, Ray};

/// Samples of one ray. `boundaries` has one more entry than the other
/// vectors whenever the ray has samples, and is empty otherwise.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RaySamples {
    /// Grid-normalized positions.
    pub points: Vec<[f64; 3]>,
    /// World distance of each sample along the ray.
    pub t: Vec<f64>,
    /// Interval length of each sample in base-voxel units.
    pub delta: Vec<f64>,
    /// Normalized interval boundaries, strictly increasing in `[0, 1]`.
    pub boundaries: Vec<f64>,
}

impl RaySamples {
    pub fn clear(&mut self) {
        self.points.clear();
        self.t.clear();
        self.delta.clear();
        self.boundaries.clear();
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Midpoint and length of sample `i`'s normalized interval.
    #[inline]
    pub fn interval(&self, i: usize) -> (f64, f64) {
        let (a, b) = (self.boundaries[i], self.boundaries[i + 1]);
        (0.5 * (a + b), b - a)
    }
}

/// Upper bound on samples per ray in unbounded mode.
const MAX_UNBOUNDED_SAMPLES: usize = 1 << 14;

/// Constant-step sampler for one parameterization.
#[derive(Clone, Copy, Debug)]
pub struct Sampler<'a> {
    pub contraction: &'a ContractionConfig,
    /// Step length in marching-space units.
    pub step: f64,
    /// Voxel edge of the initial grid in marching-space units; alpha
    /// intervals are measured in these.
    pub base_voxel: f64,
}

/// Number of boundaries `t0 + k·h` with `k·h < length`.
#[inline]
pub(crate) fn boundary_count(length: f64, step: f64) -> usize {
    let n = (length / step - 1e-6).ceil();
    if n.is_finite() && n > 0.0 {
        n as usize
    } else {
        0
    }
}

impl Sampler<'_> {
    pub fn sample(&self, ray: &Ray) -> RaySamples {
        let mut out = RaySamples::default();
        self.sample_into(ray, &mut out);
        out
    }

    pub fn sample_into(&self, ray: &Ray, out: &mut RaySamples) {
        out.clear();
        match self.contraction.mode {
            CaptureMode::Bounded => self.sample_bounded(ray, out),
            CaptureMode::Unbounded => self.sample_unbounded(ray, out),
            CaptureMode::ForwardFacing => self.sample_forward_facing(ray, out),
        }
    }

    fn sample_bounded(&self, ray: &Ray, out: &mut RaySamples) {
        let aabb = &self.contraction.aabb;
        let Some((t0, t1)) = ray_aabb_intersect(ray, aabb) else {
            return;
        };
        let length = t1 - t0;
        let h = self.step;
        let nb = boundary_count(length, h);
        if nb < 2 {
            return;
        }
        let delta = h / self.base_voxel;
        for k in 0..nb {
            out.boundaries.push(k as f64 * h / length);
        }
        for i in 0..nb - 1 {
            let t = t0 + (i as f64 + 0.5) * h;
            let q = aabb.to_normalized(ray.at(t));
            out.points.push([
                q[0].clamp(0.0, 1.0),
                q[1].clamp(0.0, 1.0),
                q[2].clamp(0.0, 1.0),
            ]);
            out.t.push(t);
            out.delta.push(delta);
        }
    }

    fn sample_unbounded(&self, ray: &Ray, out: &mut RaySamples) {
        let cfg = self.contraction;
        let o = cfg.align.apply_point(ray.origin);
        let d = cfg.align.apply_vector(ray.direction);
        let at = |t: f64| {
            contract_unbounded(
                [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]],
                cfg.b,
                cfg.p,
            )
        };
        let dist = |a: [f64; 3], b: [f64; 3]| {
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
        };
        let h = self.step;

        // boundaries in world t, chord lengths in contracted space
        let mut ts = vec![ray.near];
        let mut chords = Vec::new();
        let mut t = ray.near;
        let mut c = at(t);
        while t < ray.far && ts.len() < MAX_UNBOUNDED_SAMPLES {
            let probe = 1e-6 * t.max(1.0);
            let speed = dist(at(t + probe), c) / probe;
            let mut dt = if speed > 0.0 {
                h / speed
            } else {
                f64::INFINITY
            };
            // secant iterations toward a chord of exactly h
            for _ in 0..8 {
                if !((t + dt).is_finite() && t + dt < ray.far) {
                    break;
                }
                let chord = dist(at(t + dt), c);
                if !(chord > 0.0) || (chord - h).abs() < 1e-4 * h {
                    break;
                }
                dt *= h / chord;
            }
            let next = (t + dt).min(ray.far);
            let cn = at(next);
            let chord = dist(cn, c);
            if !(chord > 0.0) || next <= t {
                break;
            }
            ts.push(next);
            chords.push(chord);
            t = next;
            c = cn;
        }
        if chords.is_empty() {
            return;
        }
        let total: f64 = chords.iter().sum();
        let mut acc = 0.0;
        out.boundaries.push(0.0);
        for (i, &chord) in chords.iter().enumerate() {
            acc += chord;
            out.boundaries.push((acc / total).min(1.0));
            let tm = 0.5 * (ts[i] + ts[i + 1]);
            out.points.push(unbounded_to_normalized(at(tm), cfg.b));
            out.t.push(tm);
            out.delta.push(chord / self.base_voxel);
        }
        dedup_boundaries(out);
    }

    fn sample_forward_facing(&self, ray: &Ray, out: &mut RaySamples) {
        let cfg = self.contraction;
        let o = cfg.align.apply_point(ray.origin);
        let d = cfg.align.apply_vector(ray.direction);
        if !(d[2] < 0.0) {
            return;
        }
        // depth(t) = -(o.z + t d.z); u = 1 - near / depth
        let depth_at = |t: f64| -(o[2] + t * d[2]);
        let u_at = |t: f64| 1.0 - cfg.near / depth_at(t).max(cfg.near);
        // layers extend to infinity; `ray.far` only bounds the reported depth
        let u_start = u_at(ray.near);
        let h = self.step; // in normalized u

        let count = (1.0 / h + 1e-6).floor() as usize + 1;
        let us: Vec<f64> = (0..count)
            .map(|k| (k as f64 * h).min(1.0))
            .filter(|&u| u + 1e-12 >= u_start)
            .collect();
        if us.is_empty() {
            return;
        }
        // each layer sample owns the interval halfway to its neighbors
        out.boundaries.push((us[0] - 0.5 * h).max(0.0));
        for w in us.windows(2) {
            out.boundaries.push(0.5 * (w[0] + w[1]));
        }
        out.boundaries.push((us[us.len() - 1] + 0.5 * h).min(1.0));
        for (i, &u) in us.iter().enumerate() {
            let (w, t) = if u >= 1.0 - 1e-12 {
                // vanishing point
                ([d[0] / -d[2], d[1] / -d[2], 1.0], ray.far.min(1e10))
            } else {
                let depth = cfg.near / (1.0 - u);
                let t = (depth + o[2]) / -d[2];
                ([(o[0] + t * d[0]) / depth, (o[1] + t * d[1]) / depth, u], t)
            };
            out.points.push(ff_to_normalized(w, cfg));
            out.t.push(t);
            out.delta
                .push((out.boundaries[i + 1] - out.boundaries[i]) / self.base_voxel);
        }
    }
}

/// Drops zero-length trailing intervals that numerical saturation can
/// produce near the contracted boundary.
fn dedup_boundaries(out: &mut RaySamples) {
    let mut keep = out.points.len();
    while keep > 0 && out.boundaries[keep] <= out.boundaries[keep - 1] {
        keep -= 1;
    }
    out.points.truncate(keep);
    out.t.truncate(keep);
    out.delta.truncate(keep);
    out.boundaries.truncate(keep + 1);
    if keep == 0 {
        out.boundaries.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contraction::RigidTransform;
    use crate::grid::Aabb;

    #[test]
    fn bounded_ten_voxels_half_step() {
        let aabb = Aabb::new([0.0; 3], [10.0, 1.0, 1.0]).unwrap();
        let cfg = ContractionConfig::bounded(aabb);
        let sampler = Sampler {
            contraction: &cfg,
            step: 0.5,
            base_voxel: 1.0,
        };
        let ray = Ray::new([-1.0, 0.5, 0.5], [1.0, 0.0, 0.0], 1e-3, 100.0).unwrap();
        let s = sampler.sample(&ray);
        assert_eq!(s.boundaries.len(), 20);
        assert_eq!(s.len(), 19);
        assert!(s.delta.iter().all(|&d| d == 0.5));
        assert!(s.boundaries.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn bounded_miss_is_empty() {
        let cfg = ContractionConfig::bounded(Aabb::unit());
        let sampler = Sampler {
            contraction: &cfg,
            step: 0.1,
            base_voxel: 0.2,
        };
        let ray = Ray::new([-1.0, 5.0, 0.5], [1.0, 0.0, 0.0], 1e-3, 100.0).unwrap();
        let s = sampler.sample(&ray);
        assert!(s.is_empty() && s.boundaries.is_empty());
    }

    #[test]
    fn forward_facing_layer_counts() {
        for (step_layers, expected) in [(1.0, 256), (0.5, 511)] {
            let cfg =
                ContractionConfig::forward_facing(256, 1.0, [1.0, 1.0], RigidTransform::identity());
            let h = step_layers / 255.0;
            let sampler = Sampler {
                contraction: &cfg,
                step: h,
                base_voxel: 1.0 / 255.0,
            };
            let ray = Ray::new([0.0; 3], [0.0, 0.0, -1.0], 1e-3, f64::INFINITY).unwrap();
            let s = sampler.sample(&ray);
            assert_eq!(s.len(), expected);
            assert!(s.boundaries.windows(2).all(|w| w[0] < w[1]));
            assert!(s
                .points
                .iter()
                .all(|q| q.iter().all(|v| (0.0..=1.0).contains(v))));
        }
    }

    #[test]
    fn unbounded_march_reaches_shell() {
        let cfg = ContractionConfig::unbounded(1.0, f64::INFINITY, RigidTransform::identity());
        let voxel = 4.0 / 63.0;
        let sampler = Sampler {
            contraction: &cfg,
            step: 0.5 * voxel,
            base_voxel: voxel,
        };
        let ray = Ray::new([0.0; 3], [0.6, 0.8, 0.0], 1e-2, 1e6).unwrap();
        let s = sampler.sample(&ray);
        assert!(s.len() > 40 && s.len() < 200, "{}", s.len());
        assert!(s.boundaries.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s.boundaries[0], 0.0);
        assert!((s.boundaries[s.len()] - 1.0).abs() < 1e-12);
        // interior steps match the nominal contracted step; the last few are cut by `far`
        for &d in &s.delta[..s.len() - 3] {
            assert!((d - 0.5).abs() < 0.01, "{:?}", s.delta);
        }
    }
}
