//! The generalized covariance measure test.

use super::{check_alpha, residuals, Sidedness, TestResult};
use crate::error::{Error, Result};
use crate::learners::{fit_intercept_only, ConditionalMean};
use crate::model::{Dataset, Family};

/// Normalizers below this are treated as degenerate.
pub const DEGENERATE_NORMALIZER: f64 = 1e-12;

/// `(1/sqrt(n)) sum_i rx_i ry_i`.
pub fn product_residual_statistic(rx: &[f64], ry: &[f64]) -> Result<f64> {
    if rx.len() != ry.len() || rx.is_empty() {
        return Err(Error::InvalidInput(format!(
            "residual vectors must have equal nonzero length, got {} and {}",
            rx.len(),
            ry.len()
        )));
    }
    let s: f64 = rx.iter().zip(ry).map(|(a, b)| a * b).sum();
    Ok(s / (rx.len() as f64).sqrt())
}

/// Standard deviation (divide-by-n) of the products `rx_i ry_i`.
pub fn gcm_normalizer(rx: &[f64], ry: &[f64]) -> Result<f64> {
    if rx.len() != ry.len() || rx.len() < 2 {
        return Err(Error::InvalidInput(
            "GCM normalizer needs at least two paired residuals".into(),
        ));
    }
    let prods: Vec<f64> = rx.iter().zip(ry).map(|(a, b)| a * b).collect();
    normalizer_of_products(&prods)
}

pub(crate) fn normalizer_of_products(prods: &[f64]) -> Result<f64> {
    let n = prods.len() as f64;
    let m = prods.iter().sum::<f64>() / n;
    let m2 = prods.iter().map(|p| p * p).sum::<f64>() / n;
    let v = m2 - m * m;
    if !(v.max(0.0).sqrt() >= DEGENERATE_NORMALIZER) {
        return Err(Error::DegenerateVariance(format!(
            "variance of residual products is {v:.3e}"
        )));
    }
    Ok(v.sqrt())
}

/// GCM test on precomputed residuals.
pub fn gcm_from_residuals(rx: &[f64], ry: &[f64], alpha: f64, side: Sidedness) -> Result<TestResult> {
    check_alpha(alpha)?;
    let t = product_residual_statistic(rx, ry)?;
    let s = gcm_normalizer(rx, ry)?;
    let stat = t / s;
    let cutoff = side.normal_cutoff(alpha);
    let reject = side.oriented(stat) > cutoff;
    let n = rx.len() as f64;
    let mean_prod = rx.iter().zip(ry).map(|(a, b)| a * b).sum::<f64>() / n;
    Ok(TestResult::new("gcm", stat, side.normal_p_value(stat), reject, alpha)
        .with("unnormalized_statistic", t)
        .with("normalizer", s)
        .with("mean_product", mean_prod)
        .with("critical_value", cutoff)
        .with("n", rx.len()))
}

/// GCM test: normalized product-of-residuals statistic against a normal cutoff.
pub fn gcm_test(
    data: &Dataset,
    mx: &dyn ConditionalMean,
    my: &dyn ConditionalMean,
    alpha: f64,
    side: Sidedness,
) -> Result<TestResult> {
    let (rx, ry) = residuals(data, mx, my)?;
    gcm_from_residuals(&rx, &ry, alpha, side)
}

/// GCM with intercept-only means: a test of marginal association.
pub fn marginal_gcm(data: &Dataset, alpha: f64, side: Sidedness) -> Result<TestResult> {
    let mx = fit_intercept_only(data.x(), Family::Gaussian, data.p())?;
    let my = fit_intercept_only(data.y(), data.family(), data.p())?;
    let mut r = gcm_test(data, &mx, &my, alpha, side)?;
    r.method = "marginal_gcm".into();
    Ok(r)
}
