//! Conditional independence tests built on products of residuals.

pub mod dcrt;
pub mod gcm;
pub mod maxway;
pub mod metrics;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::learners::{variance_of_x_given_z, ConditionalMean, VarianceEstimator};
use crate::model::Dataset;
use crate::stats::norm_quantile;

pub use dcrt::{dcrt_conditional_variance, dcrt_hat, mx2_f_test, ndcrt_hat};
pub use gcm::{gcm_from_residuals, gcm_normalizer, gcm_test, marginal_gcm, product_residual_statistic};
pub use maxway::{maxway_crt, maxway_crt_supervised, MaxwayOptions};
pub use metrics::{error_metrics, ErrorMetrics};

/// Which deviations from the null count as evidence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    /// Reject for large positive statistics.
    #[default]
    Greater,
    /// Reject for large absolute statistics.
    TwoSided,
}

impl Sidedness {
    /// The standard normal cutoff for level `alpha`.
    pub fn normal_cutoff(self, alpha: f64) -> f64 {
        match self {
            Sidedness::Greater => norm_quantile(1.0 - alpha),
            Sidedness::TwoSided => norm_quantile(1.0 - alpha / 2.0),
        }
    }

    /// Normal-approximation p-value.
    pub fn normal_p_value(self, stat: f64) -> f64 {
        match self {
            Sidedness::Greater => crate::stats::norm_sf(stat),
            Sidedness::TwoSided => (2.0 * crate::stats::norm_sf(stat.abs())).min(1.0),
        }
    }

    /// The quantity compared against the cutoff.
    pub fn oriented(self, stat: f64) -> f64 {
        match self {
            Sidedness::Greater => stat,
            Sidedness::TwoSided => stat.abs(),
        }
    }
}

/// Outcome of one test.
#[derive(Clone, Debug, Serialize)]
pub struct TestResult {
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub diagnostics: BTreeMap<String, Value>,
}

impl TestResult {
    pub(crate) fn new(method: &str, statistic: f64, p_value: f64, reject: bool, alpha: f64) -> TestResult {
        TestResult {
            method: method.to_string(),
            statistic,
            p_value,
            reject,
            alpha,
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.diagnostics.insert(key.to_string(), value.into());
        self
    }

    pub fn diagnostic_f64(&self, key: &str) -> Option<f64> {
        self.diagnostics.get(key).and_then(Value::as_f64)
    }

    /// Attaches the error metrics of the fitted means.
    pub fn with_metrics(self, m: &ErrorMetrics) -> Self {
        let v = serde_json::to_value(m).expect("metrics serialize");
        self.with("error_metrics", v)
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(())
}

/// How resampled `X` values are drawn given the fitted mean and variance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// `N(mu_hat(z), V_hat(z))`.
    Gaussian,
    /// `Bernoulli(mu_hat(z))`.
    Bernoulli,
}

/// A fitted model of the conditional law of `X` given `Z`.
#[derive(Clone, Copy)]
pub struct CondLawX<'a> {
    pub mean: &'a dyn ConditionalMean,
    pub variance: VarianceEstimator,
    pub sampler: Sampler,
}

/// The fitted law evaluated at the rows of a dataset.
#[derive(Clone, Debug)]
pub struct FittedLaw {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
    pub sampler: Sampler,
}

impl<'a> CondLawX<'a> {
    pub fn new(mean: &'a dyn ConditionalMean, variance: VarianceEstimator, sampler: Sampler) -> Self {
        CondLawX {
            mean,
            variance,
            sampler,
        }
    }

    /// Mean and variance at every row of `data`.
    pub fn evaluate(&self, data: &Dataset) -> Result<FittedLaw> {
        let mu = self.mean.predict(data.z());
        if mu.len() != data.n() {
            return Err(Error::InvalidInput("fitted mean has the wrong length".into()));
        }
        if let Some(i) = mu.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite fitted mean at row {}", i + 1)));
        }
        if self.sampler == Sampler::Bernoulli {
            if let Some(i) = mu.iter().position(|&m| !(m > 0.0 && m < 1.0)) {
                return Err(Error::InvalidInput(format!(
                    "Bernoulli sampler needs means in (0,1); row {} has {}",
                    i + 1,
                    mu[i]
                )));
            }
        }
        let var = variance_of_x_given_z(&self.variance, data.x(), &mu)?;
        Ok(FittedLaw {
            mu,
            var,
            sampler: self.sampler,
        })
    }
}

/// `(x - mu_x_hat, y - mu_y_hat)` on the rows of `data`.
pub fn residuals(data: &Dataset, mx: &dyn ConditionalMean, my: &dyn ConditionalMean) -> Result<(Vec<f64>, Vec<f64>)> {
    let mux = mx.predict(data.z());
    let muy = my.predict(data.z());
    if mux.len() != data.n() || muy.len() != data.n() {
        return Err(Error::InvalidInput("fitted means have the wrong length".into()));
    }
    let rx: Vec<f64> = data.x().iter().zip(&mux).map(|(a, b)| a - b).collect();
    let ry: Vec<f64> = data.y().iter().zip(&muy).map(|(a, b)| a - b).collect();
    if rx.iter().chain(&ry).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite residuals".into()));
    }
    Ok((rx, ry))
}
