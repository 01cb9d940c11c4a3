//! Estimators of `Var[X|Z]` used by the resampling tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to every variance estimate.
pub const VARIANCE_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    /// `(x_i - mu_hat_i)^2`.
    ResidualSquared,
    /// `f(mu_hat_i)`.
    MeanVarianceFunction,
    /// `c` everywhere.
    Constant,
}

#[derive(Clone, Copy, Debug)]
pub struct VarianceEstimator {
    pub kind: VarianceKind,
    pub f: Option<fn(f64) -> f64>,
    pub c: Option<f64>,
}

fn bernoulli_variance(t: f64) -> f64 {
    t * (1.0 - t)
}

impl VarianceEstimator {
    pub fn residual_squared() -> Self {
        VarianceEstimator {
            kind: VarianceKind::ResidualSquared,
            f: None,
            c: None,
        }
    }

    pub fn constant(c: f64) -> Self {
        VarianceEstimator {
            kind: VarianceKind::Constant,
            f: None,
            c: Some(c),
        }
    }

    pub fn mean_variance(f: fn(f64) -> f64) -> Self {
        VarianceEstimator {
            kind: VarianceKind::MeanVarianceFunction,
            f: Some(f),
            c: None,
        }
    }

    /// `f(t) = t(1 - t)`, the variance of a Bernoulli(t) variable.
    pub fn bernoulli() -> Self {
        Self::mean_variance(bernoulli_variance)
    }

    pub fn describe(&self) -> String {
        match self.kind {
            VarianceKind::ResidualSquared => "residual_squared".into(),
            VarianceKind::MeanVarianceFunction => "mean_variance_function".into(),
            VarianceKind::Constant => format!("constant({})", self.c.unwrap_or(f64::NAN)),
        }
    }
}

/// Evaluates the estimator at each observation, floored at [`VARIANCE_FLOOR`].
pub fn variance_of_x_given_z(est: &VarianceEstimator, x: &[f64], mu_x_hat: &[f64]) -> Result<Vec<f64>> {
    if x.len() != mu_x_hat.len() {
        return Err(Error::InvalidInput(format!(
            "x has {} entries, fitted mean has {}",
            x.len(),
            mu_x_hat.len()
        )));
    }
    let raw: Vec<f64> = match est.kind {
        VarianceKind::ResidualSquared => x.iter().zip(mu_x_hat).map(|(a, m)| (a - m) * (a - m)).collect(),
        VarianceKind::MeanVarianceFunction => {
            let f = est
                .f
                .ok_or_else(|| Error::InvalidConfig("mean_variance_function estimator needs f".into()))?;
            mu_x_hat.iter().map(|&m| f(m)).collect()
        }
        VarianceKind::Constant => {
            let c = est
                .c
                .ok_or_else(|| Error::InvalidConfig("constant variance estimator needs c".into()))?;
            if !(c > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "constant variance must be positive, got {c}"
                )));
            }
            vec![c; x.len()]
        }
    };
    Ok(raw.into_iter().map(|v| v.max(VARIANCE_FLOOR)).collect())
}
