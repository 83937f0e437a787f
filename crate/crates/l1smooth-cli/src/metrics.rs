//! Error metrics for the experiment harness.

use l1smooth::{Error, Result};
use nalgebra::DVector;

/// `(sum_t ||x_t^est - x_t^true||_2) / (sum_t ||x_t^true||_2)`.
pub fn relative_error(estimate: &[DVector<f64>], truth: &[DVector<f64>]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "trajectory lengths differ: {} vs {}",
            estimate.len(),
            truth.len()
        )));
    }
    let num: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).norm()).sum();
    let den: f64 = truth.iter().map(|b| b.norm()).sum();
    if den == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(num / den)
}

/// Peak signal-to-noise ratio in dB for images on `[0, 1]`.
pub fn psnr(reconstruction: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    if reconstruction.len() != truth.len() {
        return Err(Error::Dimension("image sizes differ".to_string()));
    }
    let mse = (reconstruction - truth).norm_squared() / truth.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}
