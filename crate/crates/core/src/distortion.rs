//! Distortion loss over ragged ray batches.
//!
//! For one ray with sample weights `w`, interval midpoints `m` and interval
//! lengths `len`, the loss is
//!
//! ```text
//! L = Σᵢ Σⱼ wᵢ wⱼ |mᵢ - mⱼ|  +  1/3 Σᵢ wᵢ² lenᵢ
//! ```
//!
//! The double sum is quadratic when evaluated literally. Because midpoints are
//! strictly increasing along a ray, the absolute value can be dropped for
//! `j < i` and the pair sum becomes
//!
//! ```text
//! 2 Σᵢ wᵢ mᵢ Pʷᵢ  -  2 Σᵢ wᵢ Pʷᵐᵢ
//! ```
//!
//! where `Pʷᵢ` and `Pʷᵐᵢ` are exclusive prefix sums of `w` and `w ⊙ m`. The
//! derivative for `w_k` needs exclusive suffix sums `Sʷ`, `Sʷᵐ` as well:
//!
//! ```text
//! ∂L/∂w_k = 2 m_k Pʷ_k - 2 Pʷᵐ_k + 2 Sʷᵐ_k - 2 m_k Sʷ_k + 2/3 w_k len_k
//! ```
//!
//! Both passes are linear in the number of samples and never cross ray
//! boundaries. [`distloss_oracle`] evaluates the literal double sum.

use std::ops::RangeInclusive;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Largest batch (in samples) the quadratic oracle accepts by default.
pub const ORACLE_SAMPLE_LIMIT: usize = 100_000;

/// Per-ray samples stored back to back, delimited by `ray_offsets`.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySampleBatch {
    ray_offsets: Vec<usize>,
    midpoints: Vec<f64>,
    lengths: Vec<f64>,
    weights: Vec<f64>,
}

impl RaySampleBatch {
    /// Builds a batch from per-sample midpoints and interval lengths.
    ///
    /// `ray_offsets` has one entry per ray plus a final total; ray `r` owns
    /// samples `ray_offsets[r]..ray_offsets[r + 1]`.
    pub fn new(
        ray_offsets: Vec<usize>,
        midpoints: Vec<f64>,
        lengths: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let n = midpoints.len();
        if lengths.len() != n || weights.len() != n {
            return Err(Error::InvalidBatch(format!(
                "midpoints/lengths/weights lengths differ: {n}/{}/{}",
                lengths.len(),
                weights.len()
            )));
        }
        if ray_offsets.first() != Some(&0) || ray_offsets.last() != Some(&n) {
            return Err(Error::InvalidBatch(format!(
                "ray offsets must start at 0 and end at {n}"
            )));
        }
        if ray_offsets.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidBatch(
                "ray offsets must be non-decreasing".into(),
            ));
        }
        for (r, win) in ray_offsets.windows(2).enumerate() {
            let (a, b) = (win[0], win[1]);
            for i in a..b {
                if !midpoints[i].is_finite() || !lengths[i].is_finite() || !weights[i].is_finite() {
                    return Err(Error::InvalidBatch(format!(
                        "non-finite value in ray {r} sample {}",
                        i - a
                    )));
                }
                if lengths[i] < 0.0 {
                    return Err(Error::InvalidBatch(format!(
                        "negative interval length {} in ray {r} sample {}",
                        lengths[i],
                        i - a
                    )));
                }
                if weights[i] < 0.0 {
                    return Err(Error::InvalidBatch(format!(
                        "negative weight in ray {r} sample {}",
                        i - a
                    )));
                }
                if i > a && midpoints[i] <= midpoints[i - 1] {
                    return Err(Error::InvalidBatch(format!(
                        "midpoints not strictly increasing in ray {r} at sample {}",
                        i - a
                    )));
                }
            }
            let total: f64 = weights[a..b].iter().sum();
            if total > 1.0 + 1e-6 {
                return Err(Error::InvalidBatch(format!(
                    "ray {r} weights sum to {total} > 1"
                )));
            }
        }
        Ok(Self {
            ray_offsets,
            midpoints,
            lengths,
            weights,
        })
    }

    /// Builds a batch from interval boundaries: each ray with `N` samples
    /// contributes `N + 1` boundaries, so `boundaries.len()` equals the sample
    /// count plus the ray count.
    pub fn from_boundaries(
        ray_offsets: Vec<usize>,
        boundaries: &[f64],
        weights: Vec<f64>,
    ) -> Result<Self> {
        let rays = ray_offsets.len().saturating_sub(1);
        let samples = *ray_offsets.last().unwrap_or(&0);
        if boundaries.len() != samples + rays {
            return Err(Error::InvalidBatch(format!(
                "{rays} rays with {samples} samples need {} boundaries, got {}",
                samples + rays,
                boundaries.len()
            )));
        }
        let mut midpoints = Vec::with_capacity(samples);
        let mut lengths = Vec::with_capacity(samples);
        for (r, win) in ray_offsets.windows(2).enumerate() {
            let s = &boundaries[win[0] + r..win[1] + r + 1];
            for pair in s.windows(2) {
                midpoints.push(0.5 * (pair[0] + pair[1]));
                lengths.push(pair[1] - pair[0]);
            }
        }
        Self::new(ray_offsets, midpoints, lengths, weights)
    }

    /// Random batch: per-ray sample counts drawn from `samples`, boundaries
    /// with positive random gaps spanning `[0, 1]`, weights summing to a
    /// random total in `[0, 1)`.
    pub fn random<R: Rng>(rng: &mut R, num_rays: usize, samples: RangeInclusive<usize>) -> Self {
        let mut offsets = vec![0];
        let mut boundaries = Vec::new();
        let mut weights = Vec::new();
        for _ in 0..num_rays {
            let n = rng.gen_range(samples.clone());
            let gaps: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = gaps.iter().sum();
            let mut acc = 0.0;
            boundaries.push(0.0);
            for g in &gaps {
                acc += g / total;
                boundaries.push(acc.min(1.0));
            }
            let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let scale = rng.gen::<f64>() / raw.iter().sum::<f64>().max(1e-300);
            weights.extend(raw.iter().map(|w| w * scale));
            offsets.push(offsets.last().unwrap() + n);
        }
        Self::from_boundaries(offsets, &boundaries, weights).expect("random batch is valid")
    }

    pub fn num_rays(&self) -> usize {
        self.ray_offsets.len() - 1
    }

    pub fn num_samples(&self) -> usize {
        self.midpoints.len()
    }

    pub fn ray_offsets(&self) -> &[usize] {
        &self.ray_offsets
    }

    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weights may be changed in place; positions stay fixed.
    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn ray_range(&self, r: usize) -> std::ops::Range<usize> {
        self.ray_offsets[r]..self.ray_offsets[r + 1]
    }
}

/// Distortion loss of a single ray in one prefix-sum pass.
#[inline]
pub fn ray_distloss(m: &[f64], len: &[f64], w: &[f64]) -> f64 {
    let mut pw = 0.0;
    let mut pwm = 0.0;
    let mut pairs = 0.0;
    let mut uni = 0.0;
    for ((&mi, &li), &wi) in m.iter().zip(len).zip(w) {
        pairs += wi * (mi * pw - pwm);
        uni += wi * wi * li;
        pw += wi;
        pwm += wi * mi;
    }
    2.0 * pairs + uni / 3.0
}

/// Gradient of [`ray_distloss`] w.r.t. `w`, written into `out`.
#[inline]
pub fn ray_distloss_grad(m: &[f64], len: &[f64], w: &[f64], out: &mut [f64]) {
    let n = m.len();
    // suffix pass
    let mut sw = 0.0;
    let mut swm = 0.0;
    for k in (0..n).rev() {
        out[k] = 2.0 * (swm - m[k] * sw);
        sw += w[k];
        swm += w[k] * m[k];
    }
    // prefix pass
    let mut pw = 0.0;
    let mut pwm = 0.0;
    for k in 0..n {
        out[k] += 2.0 * (m[k] * pw - pwm) + (2.0 / 3.0) * w[k] * len[k];
        pw += w[k];
        pwm += w[k] * m[k];
    }
}

/// Per-ray losses.
pub fn distloss_per_ray(batch: &RaySampleBatch) -> Vec<f64> {
    (0..batch.num_rays())
        .into_par_iter()
        .map(|r| {
            let rg = batch.ray_range(r);
            ray_distloss(
                &batch.midpoints[rg.clone()],
                &batch.lengths[rg.clone()],
                &batch.weights[rg],
            )
        })
        .collect()
}

/// Total loss summed over rays; `O(samples)` time and memory.
pub fn distloss_forward(batch: &RaySampleBatch) -> f64 {
    distloss_per_ray(batch).iter().sum()
}

/// `∂L/∂w` for every sample of the batch.
pub fn distloss_backward(batch: &RaySampleBatch) -> Vec<f64> {
    let mut grad = vec![0.0; batch.num_samples()];
    let mut slices = Vec::with_capacity(batch.num_rays());
    let mut rest = grad.as_mut_slice();
    for win in batch.ray_offsets.windows(2) {
        let (head, tail) = rest.split_at_mut(win[1] - win[0]);
        slices.push((win[0]..win[1], head));
        rest = tail;
    }
    slices.into_par_iter().for_each(|(rg, out)| {
        ray_distloss_grad(
            &batch.midpoints[rg.clone()],
            &batch.lengths[rg.clone()],
            &batch.weights[rg],
            out,
        );
    });
    grad
}

/// Literal double-sum evaluation; refuses batches above
/// [`ORACLE_SAMPLE_LIMIT`] samples.
pub fn distloss_oracle(batch: &RaySampleBatch) -> Result<f64> {
    distloss_oracle_with_limit(batch, ORACLE_SAMPLE_LIMIT)
}

/// [`distloss_oracle`] with an explicit guard, for benchmarking.
pub fn distloss_oracle_with_limit(batch: &RaySampleBatch, limit: usize) -> Result<f64> {
    if batch.num_samples() > limit {
        return Err(Error::OracleGuard {
            samples: batch.num_samples(),
            limit,
        });
    }
    let mut total = 0.0;
    for r in 0..batch.num_rays() {
        let rg = batch.ray_range(r);
        let m = &batch.midpoints[rg.clone()];
        let len = &batch.lengths[rg.clone()];
        let w = &batch.weights[rg];
        let mut pair = 0.0;
        for i in 0..m.len() {
            for j in 0..m.len() {
                pair += w[i] * w[j] * (m[i] - m[j]).abs();
            }
        }
        let mut uni = 0.0;
        for i in 0..m.len() {
            uni += w[i] * w[i] * len[i];
        }
        total += pair + uni / 3.0;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_ray(s: &[f64], w: &[f64]) -> RaySampleBatch {
        RaySampleBatch::from_boundaries(vec![0, w.len()], s, w.to_vec()).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_loss_and_grad() {
        let b = single_ray(&[0.0, 0.2, 0.5, 1.0], &[0.0, 0.0, 0.0]);
        assert_eq!(distloss_forward(&b), 0.0);
        assert_eq!(distloss_oracle(&b).unwrap(), 0.0);
        assert!(distloss_backward(&b).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_sample_unit_interval() {
        let b = single_ray(&[0.0, 1.0], &[1.0]);
        assert!((distloss_forward(&b) - 1.0 / 3.0).abs() < 1e-15);
        assert!((distloss_backward(&b)[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn two_sample_pair_term() {
        let (a, b_) = (0.3, 0.6);
        let b =
            RaySampleBatch::new(vec![0, 2], vec![0.25, 0.75], vec![0.0, 0.0], vec![a, b_]).unwrap();
        let expected = 2.0 * a * b_ * 0.5;
        assert!((distloss_oracle(&b).unwrap() - expected).abs() < 1e-15);
        assert!((distloss_forward(&b) - expected).abs() < 1e-15);
    }

    #[test]
    fn one_hot_has_no_pair_term() {
        let b = single_ray(&[0.0, 0.1, 0.4, 0.6, 1.0], &[0.0, 0.9, 0.0, 0.0]);
        assert!((distloss_forward(&b) - 0.81 * 0.3 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_batches() {
        assert!(
            RaySampleBatch::new(vec![0, 2], vec![0.5, 0.5], vec![0.1, 0.1], vec![0.1, 0.1])
                .is_err()
        );
        assert!(
            RaySampleBatch::new(vec![0, 2], vec![0.4, 0.5], vec![0.1, -0.1], vec![0.1, 0.1])
                .is_err()
        );
        assert!(
            RaySampleBatch::new(vec![0, 3], vec![0.4, 0.5], vec![0.1, 0.1], vec![0.1, 0.1])
                .is_err()
        );
        assert!(
            RaySampleBatch::new(vec![0, 2], vec![0.4, 0.5], vec![0.1, 0.1], vec![0.9, 0.9])
                .is_err()
        );
        assert!(RaySampleBatch::from_boundaries(vec![0, 2], &[0.0, 0.5], vec![0.1, 0.1]).is_err());
    }

    #[test]
    fn empty_rays_are_allowed() {
        let b = RaySampleBatch::new(vec![0, 0, 1, 1], vec![0.5], vec![1.0], vec![0.5]).unwrap();
        assert_eq!(b.num_rays(), 3);
        assert!((distloss_forward(&b) - 0.25 / 3.0).abs() < 1e-15);
        assert_eq!(distloss_per_ray(&b)[0], 0.0);
    }

    #[test]
    fn oracle_guard() {
        let n = ORACLE_SAMPLE_LIMIT + 1;
        let m: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let b = RaySampleBatch::new(vec![0, n], m, vec![0.0; n], vec![0.0; n]).unwrap();
        assert!(matches!(
            distloss_oracle(&b),
            Err(Error::OracleGuard { .. })
        ));
        assert!(distloss_oracle_with_limit(&b, n).is_ok());
    }
}
