use crate::error::{Error, Result};

/// Compares an analytic gradient against central differences.
///
/// `f` returns the value and the analytic gradient at the given point. The
/// result is `max_i |analytic_i - numeric_i| / max(1, |analytic_i|, |numeric_i|)`.
pub fn finite_diff_check<F>(mut f: F, theta: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let (v0, analytic) = f(theta)?;
    if !v0.is_finite() {
        return Err(Error::Evaluation(format!("f(theta) = {v0}")));
    }
    if analytic.len() != theta.len() {
        return Err(Error::dim(
            "finite_diff_check",
            format!("{} gradient entries for {} coordinates", analytic.len(), theta.len()),
        ));
    }
    let mut point = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        point[i] = theta[i] + h;
        let (fp, _) = f(&point)?;
        point[i] = theta[i] - h;
        let (fm, _) = f(&point)?;
        point[i] = theta[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Evaluation(format!(
                "non-finite value while perturbing coordinate {i}"
            )));
        }
        let numeric = (fp - fm) / (2.0 * h);
        let denom = 1.0f64.max(analytic[i].abs()).max(numeric.abs());
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
