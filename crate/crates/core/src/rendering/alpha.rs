//! Density activation and front-to-back compositing.

use crate::error::{Error, Result};

/// Alphas are capped here so transmittance stays positive.
pub const ALPHA_MAX: f64 = 1.0 - 1e-6;

/// Default transmittance below which a ray stops accumulating.
pub const HALT_TRANSMITTANCE: f64 = 1e-3;

/// Reference interval (in base voxels) at which a zero density gives `alpha_init`.
pub const REFERENCE_STEP: f64 = 0.5;

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Density offset such that `alpha(raw = 0, REFERENCE_STEP) = alpha_init`.
pub fn alpha_shift(alpha_init: f64) -> f64 {
    ((1.0 - alpha_init).powf(-1.0 / REFERENCE_STEP) - 1.0).ln()
}

/// `alpha = 1 - exp(-softplus(raw + shift) · interval)` and `∂alpha/∂raw`,
/// computed in one pass. Alpha is capped at [`ALPHA_MAX`]; the derivative is
/// zero on the cap.
#[inline]
pub fn density_to_alpha(raw: f64, shift: f64, interval: f64) -> (f64, f64) {
    let x = raw + shift;
    let tau = softplus(x) * interval;
    let alpha = -(-tau).exp_m1();
    let e = (-tau).exp();
    if alpha > ALPHA_MAX {
        return (ALPHA_MAX, 0.0);
    }
    (alpha, e * interval * sigmoid(x))
}

/// Output of [`composite`].
#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub rgb: [f64; 3],
    /// One weight per input sample; zero after the halt point.
    pub weights: Vec<f64>,
    /// Transmittance left after the last processed sample.
    pub transmittance: f64,
}

/// Front-to-back alpha compositing: `wᵢ = Tᵢ αᵢ`, `Tᵢ₊₁ = Tᵢ (1 - αᵢ)`,
/// `rgb = Σ wᵢ cᵢ + T · background`. Stops once `T < halt` (pass `0.0` to
/// composite every sample).
pub fn composite(
    alphas: &[f64],
    colors: &[[f64; 3]],
    background: [f64; 3],
    halt: f64,
) -> Result<Composite> {
    if alphas.len() != colors.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} alphas but {} colors",
            alphas.len(),
            colors.len()
        )));
    }
    if let Some(i) = alphas.iter().position(|a| !(0.0..1.0).contains(a)) {
        return Err(Error::InvalidArgument(format!(
            "alpha[{i}] = {} is outside [0, 1)",
            alphas[i]
        )));
    }
    let mut weights = vec![0.0; alphas.len()];
    let mut t = 1.0;
    let mut rgb = [0.0; 3];
    for (i, (&a, c)) in alphas.iter().zip(colors).enumerate() {
        if t < halt {
            break;
        }
        let w = t * a;
        weights[i] = w;
        for k in 0..3 {
            rgb[k] += w * c[k];
        }
        t *= 1.0 - a;
    }
    for k in 0..3 {
        rgb[k] += t * background[k];
    }
    Ok(Composite {
        rgb,
        weights,
        transmittance: t,
    })
}
