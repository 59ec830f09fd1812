use crate::{Error, Result};

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Which normalization constant a Gaussian log-density carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DensityForm {
    /// Fully normalized density, including the `-(n/2) ln 2π` term.
    #[default]
    Normalized,
    /// Drops the `(2π)^(-n/2)` factor; the density at the mean with unit
    /// covariance is exactly 1. Gradients are identical to `Normalized`.
    ConstantFree,
}

impl DensityForm {
    pub fn constant(self, dim: usize) -> f64 {
        match self {
            DensityForm::Normalized => -0.5 * dim as f64 * LN_2PI,
            DensityForm::ConstantFree => 0.0,
        }
    }
}

/// Log-density of a diagonal Gaussian `N(mu, diag(sigma^2))` at `x`.
pub fn gaussian_logpdf_diag(
    x: &[f64],
    mu: &[f64],
    sigma: &[f64],
    form: DensityForm,
) -> Result<f64> {
    crate::error::check_len("gaussian mean", x.len(), mu.len())?;
    crate::error::check_len("gaussian sigma", x.len(), sigma.len())?;
    let mut quad = 0.0;
    let mut log_det = 0.0;
    for ((xi, mi), si) in x.iter().zip(mu).zip(sigma) {
        if !(*si > 0.0) || !si.is_finite() {
            return Err(Error::InvalidInput(format!("non-positive sigma {si}")));
        }
        let z = (xi - mi) / si;
        quad += z * z;
        log_det += 2.0 * si.ln();
    }
    Ok(-0.5 * quad - 0.5 * log_det + form.constant(x.len()))
}
