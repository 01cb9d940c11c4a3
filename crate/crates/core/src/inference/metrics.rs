//! Estimation-error summaries of the fitted conditional means against the truth.

use serde::Serialize;

use super::CondLawX;
use crate::error::{Error, Result};
use crate::learners::ConditionalMean;
use crate::model::{true_conditional_means, true_var_x, true_var_y, Dataset, GroundTruth};

/// Root-mean-square errors of the fitted means, plain and variance-weighted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ErrorMetrics {
    /// `sqrt(mean (mu_x_hat - mu_x)^2)`.
    pub e_nx: f64,
    /// Weighted by `Var[Y|Z]`.
    pub e_nx_prime: f64,
    /// `sqrt(mean (mu_y_hat - mu_y)^2)`.
    pub e_ny: f64,
    /// Weighted by `Var[X|Z]`.
    pub e_ny_prime: f64,
    /// Weighted by the fitted `V_hat[X|Z]`.
    pub e_ny_prime_hat: f64,
}

impl ErrorMetrics {
    /// Componentwise mean of a collection.
    pub fn average(items: &[ErrorMetrics]) -> ErrorMetrics {
        let k = items.len().max(1) as f64;
        let mut acc = ErrorMetrics::default();
        for m in items {
            acc.e_nx += m.e_nx / k;
            acc.e_nx_prime += m.e_nx_prime / k;
            acc.e_ny += m.e_ny / k;
            acc.e_ny_prime += m.e_ny_prime / k;
            acc.e_ny_prime_hat += m.e_ny_prime_hat / k;
        }
        acc
    }
}

fn weighted_rms(err: &[f64], w: &[f64]) -> f64 {
    let n = err.len() as f64;
    (err.iter().zip(w).map(|(e, w)| e * e * w).sum::<f64>() / n).sqrt()
}

/// Error metrics of `mx`, `my` on the rows of `data` under the model `truth`.
pub fn error_metrics(
    data: &Dataset,
    truth: &GroundTruth,
    mx: &dyn ConditionalMean,
    my: &dyn ConditionalMean,
    law_x: &CondLawX,
) -> Result<ErrorMetrics> {
    let (mu_x, mu_y) = true_conditional_means(truth, data.z())?;
    let hat_x = mx.predict(data.z());
    let hat_y = my.predict(data.z());
    if hat_x.len() != data.n() || hat_y.len() != data.n() {
        return Err(Error::InvalidInput("fitted means have the wrong length".into()));
    }
    let ex: Vec<f64> = hat_x.iter().zip(&mu_x).map(|(a, b)| a - b).collect();
    let ey: Vec<f64> = hat_y.iter().zip(&mu_y).map(|(a, b)| a - b).collect();
    let vx = true_var_x(truth, &mu_x);
    let vy = true_var_y(truth, &mu_x, &mu_y);
    let vhat = law_x.evaluate(data)?.var;
    let ones = vec![1.0; data.n()];
    Ok(ErrorMetrics {
        e_nx: weighted_rms(&ex, &ones),
        e_nx_prime: weighted_rms(&ex, &vy),
        e_ny: weighted_rms(&ey, &ones),
        e_ny_prime: weighted_rms(&ey, &vx),
        e_ny_prime_hat: weighted_rms(&ey, &vhat),
    })
}
