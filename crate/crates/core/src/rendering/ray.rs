use crate::error::{Error, Result};
use crate::grid::Aabb;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    /// Unit length.
    pub direction: [f64; 3],
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn new(origin: [f64; 3], direction: [f64; 3], near: f64, far: f64) -> Result<Self> {
        let n = (direction[0].powi(2) + direction[1].powi(2) + direction[2].powi(2)).sqrt();
        if (n - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!(
                "ray direction must be unit length, got norm {n}"
            )));
        }
        if !(near > 0.0 && near < far) {
            return Err(Error::InvalidArgument(format!(
                "ray needs 0 < near < far, got {near}, {far}"
            )));
        }
        Ok(Self {
            origin,
            direction,
            near,
            far,
        })
    }

    #[inline]
    pub fn at(&self, t: f64) -> [f64; 3] {
        [
            self.origin[0] + t * self.direction[0],
            self.origin[1] + t * self.direction[1],
            self.origin[2] + t * self.direction[2],
        ]
    }
}

/// Slab-method entry and exit distances, clipped to `[ray.near, ray.far]`.
/// Returns `None` when the clipped interval is empty.
#[inline]
pub fn ray_aabb_intersect(ray: &Ray, aabb: &Aabb) -> Option<(f64, f64)> {
    let mut t0 = ray.near;
    let mut t1 = ray.far;
    for k in 0..3 {
        let o = ray.origin[k];
        let d = ray.direction[k];
        if d == 0.0 {
            if o < aabb.min[k] || o > aabb.max[k] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let (mut a, mut b) = ((aabb.min[k] - o) * inv, (aabb.max[k] - o) * inv);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t0 = t0.max(a);
        t1 = t1.min(b);
        if t0 >= t1 {
            return None;
        }
    }
    Some((t0, t1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_hit() {
        let ray = Ray::new([-2.0, 0.5, 0.5], [1.0, 0.0, 0.0], 1e-6, 100.0).unwrap();
        assert_eq!(ray_aabb_intersect(&ray, &Aabb::unit()), Some((2.0, 3.0)));
    }

    #[test]
    fn pointing_away_misses() {
        let ray = Ray::new([-2.0, 0.5, 0.5], [-1.0, 0.0, 0.0], 1e-6, 100.0).unwrap();
        assert_eq!(ray_aabb_intersect(&ray, &Aabb::unit()), None);
        let ray = Ray::new([-2.0, 1.5, 0.5], [1.0, 0.0, 0.0], 1e-6, 100.0).unwrap();
        assert_eq!(ray_aabb_intersect(&ray, &Aabb::unit()), None);
    }

    #[test]
    fn clipped_by_near_and_far() {
        let ray = Ray::new([0.5, 0.5, 0.5], [0.0, 0.0, 1.0], 0.1, 0.3).unwrap();
        assert_eq!(ray_aabb_intersect(&ray, &Aabb::unit()), Some((0.1, 0.3)));
    }

    #[test]
    fn rejects_bad_rays() {
        assert!(Ray::new([0.0; 3], [1.0, 1.0, 0.0], 0.1, 1.0).is_err());
        assert!(Ray::new([0.0; 3], [1.0, 0.0, 0.0], 0.0, 1.0).is_err());
        assert!(Ray::new([0.0; 3], [1.0, 0.0, 0.0], 2.0, 1.0).is_err());
    }
}
