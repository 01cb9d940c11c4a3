//! Kernel ridge regression in the first-order Sobolev space on `[0, 1]` with
//! `f(0) = 0`, whose reproducing kernel is `k(s, t) = min(s, t)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::ConditionalMean;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct KernelRidgeModel {
    knots: Vec<f64>,
    dual_weights: Vec<f64>,
    lambda: f64,
}

impl KernelRidgeModel {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn dual_weights(&self) -> &[f64] {
        &self.dual_weights
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn predict_at(&self, t: f64) -> f64 {
        self.knots
            .iter()
            .zip(&self.dual_weights)
            .map(|(&k, &w)| w * k.min(t))
            .sum()
    }
}

impl ConditionalMean for KernelRidgeModel {
    /// Uses the first column of `z` as the univariate input.
    fn predict(&self, z: &DMatrix<f64>) -> Vec<f64> {
        z.column(0).iter().map(|&t| self.predict_at(t)).collect()
    }
}

/// The default penalty `n^{-2/3}`.
pub fn default_sobolev_lambda(n: usize) -> f64 {
    (n as f64).powf(-2.0 / 3.0)
}

pub(crate) fn min_kernel(z: &[f64]) -> DMatrix<f64> {
    let n = z.len();
    DMatrix::from_fn(n, n, |i, j| z[i].min(z[j]))
}

/// Solves `(K + n lambda I) w = target` with `K_ij = min(z_i, z_j)`.
pub fn fit_kernel_ridge_sobolev(z: &[f64], target: &[f64], lambda: f64) -> Result<KernelRidgeModel> {
    let n = z.len();
    if n == 0 || target.len() != n {
        return Err(Error::InvalidInput(format!(
            "kernel ridge needs equal nonzero lengths, got {} and {}",
            n,
            target.len()
        )));
    }
    if let Some(i) = z.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput(format!(
            "kernel ridge input {} at row {} is outside [0, 1]",
            z[i],
            i + 1
        )));
    }
    if !target.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite kernel ridge target".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let mut a = min_kernel(z);
    let ridge = n as f64 * lambda;
    for i in 0..n {
        a[(i, i)] += ridge;
    }
    let rhs = DVector::from_column_slice(target);
    let w = match a.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidInput("kernel ridge system is singular".into()))?,
    };
    Ok(KernelRidgeModel {
        knots: z.to_vec(),
        dual_weights: w.iter().copied().collect(),
        lambda,
    })
}
