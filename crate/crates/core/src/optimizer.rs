//! Adam over flat parameter arrays.
//!
//! [`adam_step`] is the single-pass update used for training. It leaves every
//! entry whose gradient is exactly zero untouched: the parameter and both
//! moment buffers keep their bits. The step counter is global, so bias
//! correction for an entry that resumes after being skipped uses the current
//! global step. Sparse-Adam variants that still decay the moments of skipped
//! entries behave differently.
//!
//! [`adam_reference_step`] is the textbook update over every entry.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PAR_CHUNK: usize = 1 << 14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Moment buffers and step counter for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            config,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    fn check(&self, params: &[f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len()
            || params.len() != self.m.len()
            || self.v.len() != self.m.len()
        {
            return Err(Error::ShapeMismatch(format!(
                "adam: params {}, grads {}, m {}, v {}",
                params.len(),
                grads.len(),
                self.m.len(),
                self.v.len()
            )));
        }
        Ok(())
    }
}

fn first_non_finite(grads: &[f64]) -> Option<usize> {
    grads
        .par_chunks(PAR_CHUNK)
        .enumerate()
        .filter_map(|(ci, chunk)| {
            chunk
                .iter()
                .position(|g| !g.is_finite())
                .map(|i| ci * PAR_CHUNK + i)
        })
        .min()
}

/// Fused Adam step that skips zero-gradient entries. `lr_mult` scales the
/// configured learning rate for this call.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr_mult: f64,
) -> Result<()> {
    state.check(params, grads)?;
    if let Some(index) = first_non_finite(grads) {
        return Err(Error::NonFiniteGradient {
            index,
            value: grads[index],
        });
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let corr1 = 1.0 / (1.0 - beta1.powi(t));
    let corr2 = 1.0 / (1.0 - beta2.powi(t));
    let lr = lr * lr_mult;

    params
        .par_chunks_mut(PAR_CHUNK)
        .zip(grads.par_chunks(PAR_CHUNK))
        .zip(state.m.par_chunks_mut(PAR_CHUNK))
        .zip(state.v.par_chunks_mut(PAR_CHUNK))
        .for_each(|(((p, g), m), v)| {
            for i in 0..p.len() {
                let gi = g[i];
                if gi == 0.0 {
                    continue;
                }
                let mi = beta1 * m[i] + (1.0 - beta1) * gi;
                let vi = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                m[i] = mi;
                v[i] = vi;
                p[i] -= lr * (mi * corr1) / ((vi * corr2).sqrt() + eps);
            }
        });
    Ok(())
}

/// Textbook Adam over every entry, one scalar at a time.
pub fn adam_reference_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr_mult: f64,
) -> Result<()> {
    state.check(params, grads)?;
    state.step += 1;
    let c = state.config;
    let t = state.step as f64;
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
        let m_hat = state.m[i] / (1.0 - c.beta1.powf(t));
        let v_hat = state.v[i] / (1.0 - c.beta2.powf(t));
        params[i] -= c.lr * lr_mult * m_hat / (v_hat.sqrt() + c.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> AdamConfig {
        AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }

    #[test]
    fn all_zero_grads_leave_state_bit_identical() {
        let mut p = vec![0.5, -1.25, 3.0];
        let mut s = AdamState::new(3, cfg());
        s.m = vec![0.1, 0.2, -0.3];
        s.v = vec![0.01, 0.02, 0.03];
        let (p0, m0, v0) = (p.clone(), s.m.clone(), s.v.clone());
        adam_step(&mut p, &[0.0; 3], &mut s, 1.0).unwrap();
        assert_eq!(p, p0);
        assert_eq!(s.m, m0);
        assert_eq!(s.v, v0);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1, cfg());
        adam_step(&mut p, &[1.0], &mut s, 1.0).unwrap();
        assert!((s.m[0] - 0.1).abs() < 1e-15);
        assert!((s.v[0] - 0.01).abs() < 1e-15);
        assert!((p[0] - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn reference_decays_moments_on_zero_grad() {
        let mut p = vec![1.0];
        let mut s = AdamState::new(1, cfg());
        s.m[0] = 0.5;
        s.v[0] = 0.25;
        s.step = 3;
        let mut s_ref = s.clone();
        let mut p_ref = p.clone();
        adam_step(&mut p, &[0.0], &mut s, 1.0).unwrap();
        adam_reference_step(&mut p_ref, &[0.0], &mut s_ref, 1.0).unwrap();
        assert_eq!(s.m[0], 0.5);
        assert!((s_ref.m[0] - 0.45).abs() < 1e-15);
        assert!((s_ref.v[0] - 0.2475).abs() < 1e-15);
        // reference still moves the parameter through its momentum
        assert!(p_ref[0] < 1.0);
    }

    #[test]
    fn reference_zero_grads_from_fresh_state_keep_params() {
        let mut p = vec![0.3, -0.7];
        let mut s = AdamState::new(2, cfg());
        adam_reference_step(&mut p, &[0.0, 0.0], &mut s, 1.0).unwrap();
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(2, cfg());
        adam_reference_step(&mut p, &[2.0, -3.0], &mut s, 1.0).unwrap();
        let first = p.clone();
        adam_reference_step(&mut p, &[2.0, -3.0], &mut s, 1.0).unwrap();
        assert!(first[0] < 0.0 && p[0] < first[0]);
        assert!(first[1] > 0.0 && p[1] > first[1]);
    }

    #[test]
    fn non_finite_gradient_names_index() {
        let mut p = vec![0.0; 4];
        let mut s = AdamState::new(4, cfg());
        let err = adam_step(&mut p, &[0.0, 1.0, f64::NAN, 0.0], &mut s, 1.0).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 2, .. }));
        assert_eq!(s.step, 0);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(2, cfg());
        assert!(adam_step(&mut p, &[0.0; 3], &mut s, 1.0).is_err());
        assert!(adam_reference_step(&mut p, &[0.0; 2], &mut s, 1.0).is_err());
    }

    #[test]
    fn lr_multiplier_scales_update() {
        let mut a = vec![0.0];
        let mut b = vec![0.0];
        let mut sa = AdamState::new(1, cfg());
        let mut sb = AdamState::new(1, cfg());
        adam_step(&mut a, &[1.0], &mut sa, 1.0).unwrap();
        adam_step(&mut b, &[1.0], &mut sb, 0.5).unwrap();
        assert!((b[0] - 0.5 * a[0]).abs() < 1e-15);
    }
}
