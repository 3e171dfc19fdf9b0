//! Central finite-difference gradient checks.

/// Worst disagreement between analytic and numeric derivatives.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    /// `|a - n| / max(|a|, |n|, floor)`.
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Compares `analytic[i]` with `(f(x + eps·eᵢ) - f(x - eps·eᵢ)) / 2eps` for
/// each `i` in `indices`. `floor` keeps the relative error of tiny
/// derivatives meaningful.
pub fn check_gradient<F>(
    mut f: F,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    eps: f64,
    floor: f64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut report = GradCheckReport::default();
    for &i in indices {
        let orig = probe[i];
        probe[i] = orig + eps;
        let fp = f(&probe);
        probe[i] = orig - eps;
        let fm = f(&probe);
        probe[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let abs = (analytic[i] - numeric).abs();
        let rel = abs / analytic[i].abs().max(numeric.abs()).max(floor);
        report.max_abs_err = report.max_abs_err.max(abs);
        report.max_rel_err = report.max_rel_err.max(rel);
        report.checked += 1;
    }
    report
}
