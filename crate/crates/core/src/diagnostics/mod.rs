//! Numerical checks of the large-sample theory: normality of the resampling
//! distribution, equivalence of the dCRT and GCM, the efficient information and
//! optimal local power, and conditional limit theorems.
//!
//! Each check returns a [`TheoryCheckReport`]; `pass` is true exactly when the
//! metric meets the threshold (and any trend requirement stated with it).

pub mod conditional;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::{
    dcrt_conditional_variance, dcrt_hat, gcm_normalizer, gcm_test, ndcrt_hat, residuals, CondLawX, Sampler, Sidedness,
};
use crate::learners::{fit_lasso_cv, fit_oracle, ConditionalMean, LassoConfig, MeanModel, VarianceEstimator, Which};
use crate::model::{
    generate_dataset, sample_ar1_gaussian, true_conditional_means, true_var_x, true_var_y, Family, GroundTruth,
};
use crate::rng::{label_key, substream, SimRng};
use crate::stats::{median, norm_cdf, norm_quantile, ols_slope};

pub use conditional::{
    check_conditional_clt, check_conditional_wlln, check_quantile_convergence, CltConfig, Conditioning, QuantileConfig,
    QuantileSequence, TermLaw, WllnConfig,
};

/// Outcome of one theory check.
#[derive(Clone, Debug, Serialize)]
pub struct TheoryCheckReport {
    pub name: String,
    pub metric: f64,
    pub threshold: f64,
    pub pass: bool,
    pub sample_sizes: Vec<usize>,
    /// Per-sample-size or per-setting values behind the metric.
    pub details: Vec<Detail>,
}

/// One labeled value behind a report.
#[derive(Clone, Debug, Serialize)]
pub struct Detail {
    pub label: String,
    pub n: usize,
    pub value: f64,
}

impl Detail {
    pub fn new(label: &str, n: usize, value: f64) -> Detail {
        Detail {
            label: label.to_string(),
            n,
            value,
        }
    }
}

/// Whether `v` is strictly decreasing.
pub(crate) fn decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// A sparse linear design used by the equivalence checks.
#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticDesign {
    pub p: usize,
    pub s: usize,
    pub rho: f64,
    pub nu: f64,
    pub folds: usize,
}

impl Default for DiagnosticDesign {
    fn default() -> Self {
        DiagnosticDesign {
            p: 100,
            s: 5,
            rho: 0.4,
            nu: 0.3,
            folds: 5,
        }
    }
}

impl DiagnosticDesign {
    fn truth(&self, theta: f64) -> Result<GroundTruth> {
        GroundTruth::sparse(self.p, self.s, self.nu, theta, self.rho, Family::Gaussian)
    }

    /// Both `X` and `Y` binary with success probability near 0.15, so the
    /// products of residuals are skewed and normality of the resampling
    /// distribution sets in only gradually.
    pub fn skewed_binary() -> DiagnosticDesign {
        DiagnosticDesign {
            p: 20,
            s: 3,
            rho: 0.4,
            nu: 0.3,
            folds: 5,
        }
    }

    fn skewed_truth(&self) -> Result<GroundTruth> {
        Ok(
            GroundTruth::sparse(self.p, self.s, self.nu, 0.0, self.rho, Family::Binomial)?
                .with_x_family(Family::Binomial)
                .with_intercepts(-1.75, -1.75),
        )
    }
}

fn lasso_means(
    d: &crate::model::Dataset,
    truth: &GroundTruth,
    folds: usize,
    rng: &mut SimRng,
) -> Result<(MeanModel, MeanModel)> {
    let cfg = LassoConfig::default();
    let mx = fit_lasso_cv(d.z(), d.x(), truth.x_family, folds, &cfg, rng)?.model;
    let my = fit_lasso_cv(d.z(), d.y(), d.family(), folds, &cfg, rng)?.model;
    Ok((mx, my))
}

const Z95: f64 = 1.6448536269514722;

/// Null design for the critical-value check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalValueDesign {
    /// The default simulation cell (`p = 400`, `s = 5`, `rho = 0.4`) with
    /// Gaussian `X`, resampled from a Gaussian law with constant variance.
    DefaultGaussian,
    /// [`DiagnosticDesign::skewed_binary`], resampled from Bernoulli laws.
    SkewedBinary,
}

/// Mean absolute deviation of the normalized resampled 0.95 quantiles of the
/// dCRT and ndCRT from `z_0.95`, per `n`, on null data with lasso fits. Each
/// test draws `m_per_n * n` resamples. Passes when both series decrease along
/// `n_list` and end below `threshold`.
pub fn check_critical_value_convergence(
    design: CriticalValueDesign,
    n_list: &[usize],
    m_per_n: usize,
    reps: usize,
    threshold: f64,
    seed: u64,
) -> Result<TheoryCheckReport> {
    if n_list.is_empty() || reps == 0 || m_per_n == 0 {
        return Err(Error::InvalidParameter(
            "need sample sizes, resamples and replicates".into(),
        ));
    }
    let (truth, folds) = match design {
        CriticalValueDesign::DefaultGaussian => {
            let d = DiagnosticDesign::default();
            (GroundTruth::sparse(400, 5, 0.3, 0.0, 0.4, Family::Gaussian)?, d.folds)
        }
        CriticalValueDesign::SkewedBinary => {
            let d = DiagnosticDesign::skewed_binary();
            (d.skewed_truth()?, d.folds)
        }
    };
    let mut dcrt_series = Vec::new();
    let mut ndcrt_series = Vec::new();
    let mut details = Vec::new();
    for &n in n_list {
        let m = m_per_n * n;
        let devs: Vec<(f64, f64)> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = substream(seed, &[label_key("critical_values"), n as u64, r as u64]);
                let d = generate_dataset(&truth, n, &mut rng)?;
                let (mx, my) = lasso_means(&d, &truth, folds, &mut rng)?;
                let law = match design {
                    CriticalValueDesign::DefaultGaussian => {
                        let fitted = mx.predict(d.z());
                        let v = d.x().iter().zip(&fitted).map(|(x, m)| (x - m).powi(2)).sum::<f64>() / n as f64;
                        CondLawX::new(&mx, VarianceEstimator::constant(v.max(1e-8)), Sampler::Gaussian)
                    }
                    CriticalValueDesign::SkewedBinary => {
                        CondLawX::new(&mx, VarianceEstimator::bernoulli(), Sampler::Bernoulli)
                    }
                };
                let a = dcrt_hat(&d, &law, &my, m, 0.05, Sidedness::Greater, &mut rng)?;
                let b = ndcrt_hat(&d, &law, &my, m, 0.05, Sidedness::Greater, &mut rng)?;
                let qa = a.diagnostic_f64("normalized_critical_value").unwrap_or(f64::NAN);
                let qb = b.diagnostic_f64("critical_value").unwrap_or(f64::NAN);
                Ok(((qa - Z95).abs(), (qb - Z95).abs()))
            })
            .collect::<Result<_>>()?;
        let k = devs.len() as f64;
        let da = devs.iter().map(|v| v.0).sum::<f64>() / k;
        let db = devs.iter().map(|v| v.1).sum::<f64>() / k;
        details.push(Detail::new("dcrt_mean_abs_deviation", n, da));
        details.push(Detail::new("ndcrt_mean_abs_deviation", n, db));
        dcrt_series.push(da);
        ndcrt_series.push(db);
    }
    let last = dcrt_series.last().unwrap().max(*ndcrt_series.last().unwrap());
    let pass = last < threshold && decreasing(&dcrt_series) && decreasing(&ndcrt_series);
    let suffix = match design {
        CriticalValueDesign::DefaultGaussian => "default_gaussian",
        CriticalValueDesign::SkewedBinary => "skewed_binary",
    };
    Ok(TheoryCheckReport {
        name: format!("critical_value_convergence_{suffix}"),
        metric: last,
        threshold,
        pass,
        sample_sizes: n_list.to_vec(),
        details,
    })
}

/// Which conditional means the variance-equivalence check plugs in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanSource {
    Lasso,
    Oracle,
}

/// Which variance the dCRT resampling law uses in the equivalence check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EquivalenceVariance {
    ResidualSquared,
    /// The true `Var[X|Z] = 1`.
    Truth,
}

/// `(S_dCRT / S_GCM)^2` on one dataset.
pub fn variance_ratio(data: &crate::model::Dataset, law: &CondLawX, my: &dyn ConditionalMean) -> Result<f64> {
    let (rx, ry) = residuals(data, law.mean, my)?;
    let s_gcm = gcm_normalizer(&rx, &ry)?;
    let s2 = dcrt_conditional_variance(law, data, my)?;
    Ok(s2 / (s_gcm * s_gcm))
}

/// Median over replicates of `|(S_dCRT / S_GCM)^2 - 1|` at each `n`.
pub fn variance_ratio_medians(
    n_list: &[usize],
    reps: usize,
    means: MeanSource,
    variance: EquivalenceVariance,
    design: &DiagnosticDesign,
    seed: u64,
) -> Result<Vec<f64>> {
    let truth = design.truth(0.0)?;
    n_list
        .iter()
        .map(|&n| {
            let devs: Vec<f64> = (0..reps)
                .into_par_iter()
                .map(|r| {
                    let mut rng = substream(seed, &[label_key("variance_ratio"), n as u64, r as u64]);
                    let d = generate_dataset(&truth, n, &mut rng)?;
                    let est = match variance {
                        EquivalenceVariance::ResidualSquared => VarianceEstimator::residual_squared(),
                        EquivalenceVariance::Truth => VarianceEstimator::constant(1.0),
                    };
                    let ratio = match means {
                        MeanSource::Lasso => {
                            let (mx, my) = lasso_means(&d, &truth, design.folds, &mut rng)?;
                            variance_ratio(&d, &CondLawX::new(&mx, est, Sampler::Gaussian), &my)?
                        }
                        MeanSource::Oracle => {
                            let mx = fit_oracle(&truth, Which::X);
                            let my = fit_oracle(&truth, Which::Y);
                            variance_ratio(&d, &CondLawX::new(&mx, est, Sampler::Gaussian), &my)?
                        }
                    };
                    Ok((ratio - 1.0).abs())
                })
                .collect::<Result<_>>()?;
            Ok(median(&devs))
        })
        .collect()
}

/// Median `|(S_dCRT / S_GCM)^2 - 1|` with lasso means and squared-residual
/// variances; passes when the value at the largest `n` is below `threshold`.
pub fn check_variance_equivalence(
    n_list: &[usize],
    reps: usize,
    threshold: f64,
    seed: u64,
) -> Result<TheoryCheckReport> {
    let design = DiagnosticDesign::default();
    let med = variance_ratio_medians(
        n_list,
        reps,
        MeanSource::Lasso,
        EquivalenceVariance::ResidualSquared,
        &design,
        seed,
    )?;
    let metric = *med
        .last()
        .ok_or_else(|| Error::InvalidParameter("empty n_list".into()))?;
    Ok(TheoryCheckReport {
        name: "variance_equivalence".into(),
        metric,
        threshold,
        pass: metric < threshold,
        sample_sizes: n_list.to_vec(),
        details: n_list
            .iter()
            .zip(&med)
            .map(|(&n, &v)| Detail::new("median_abs_ratio_minus_one", n, v))
            .collect(),
    })
}

/// Log-log slope of the median variance-ratio deviation against `n`.
pub fn variance_ratio_slope(n_list: &[usize], medians: &[f64]) -> f64 {
    let lx: Vec<f64> = n_list.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = medians.iter().map(|v| v.ln()).collect();
    ols_slope(&lx, &ly)
}

/// Agreement of dCRT and GCM decisions (one-sided, level 0.05) with lasso
/// means and squared-residual variances, under the null and at
/// `theta = 2 / sqrt(n)`. The metric is the smaller agreement rate; the
/// details also carry the median variance-ratio deviation.
pub fn check_test_agreement(n: usize, reps: usize, m: usize, threshold: f64, seed: u64) -> Result<TheoryCheckReport> {
    let design = DiagnosticDesign::default();
    let mut details = Vec::new();
    let mut rates = Vec::new();
    for (label, theta) in [("null", 0.0), ("local_alternative", 2.0 / (n as f64).sqrt())] {
        let truth = design.truth(theta)?;
        let rows: Vec<(bool, f64)> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = substream(seed, &[label_key("agreement"), label_key(label), r as u64]);
                let d = generate_dataset(&truth, n, &mut rng)?;
                let (mx, my) = lasso_means(&d, &truth, design.folds, &mut rng)?;
                let law = CondLawX::new(&mx, VarianceEstimator::residual_squared(), Sampler::Gaussian);
                let a = dcrt_hat(&d, &law, &my, m, 0.05, Sidedness::Greater, &mut rng)?;
                let g = gcm_test(&d, &mx, &my, 0.05, Sidedness::Greater)?;
                let ratio = variance_ratio(&d, &law, &my)?;
                Ok((a.reject == g.reject, (ratio - 1.0).abs()))
            })
            .collect::<Result<_>>()?;
        let agree = rows.iter().filter(|r| r.0).count() as f64 / reps as f64;
        let med = median(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
        details.push(Detail::new(&format!("{label}_agreement"), n, agree));
        details.push(Detail::new(&format!("{label}_median_abs_ratio_minus_one"), n, med));
        rates.push(agree);
    }
    let metric = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(TheoryCheckReport {
        name: "test_agreement".into(),
        metric,
        threshold,
        pass: metric >= threshold,
        sample_sizes: vec![n],
        details,
    })
}

/// `s^2 = E[Var[X|Z] Var[Y|Z]]`: exact when both conditional variances are
/// constant, otherwise a Monte Carlo average over `reps` draws of `Z`.
pub fn efficient_information<R: Rng + ?Sized>(truth: &GroundTruth, reps: usize, rng: &mut R) -> Result<f64> {
    if truth.x_family == Family::Gaussian && truth.family == Family::Gaussian {
        let vx = true_var_x(truth, &[0.0])[0];
        return Ok(vx * true_var_y(truth, &[0.0], &[0.0])[0]);
    }
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be positive".into()));
    }
    let z = sample_ar1_gaussian(reps, truth.p(), truth.rho, rng)?;
    let (mx, my) = true_conditional_means(truth, &z)?;
    let vx = true_var_x(truth, &mx);
    let vy = true_var_y(truth, &mx, &my);
    Ok(vx.iter().zip(&vy).map(|(a, b)| a * b).sum::<f64>() / reps as f64)
}

/// Local power bound `1 - Phi(z_{1-alpha} - h s)`.
pub fn optimal_power(h: f64, s: f64, alpha: f64) -> f64 {
    1.0 - norm_cdf(norm_quantile(1.0 - alpha) - h * s)
}

/// One-sided oracle GCM power at `theta = h / sqrt(n)` in a two-covariate
/// Gaussian model, against the local power bound. Passes when every `h` is
/// within `tolerance`; the metric is the largest gap.
pub fn check_optimal_power(
    h_list: &[f64],
    n: usize,
    reps: usize,
    tolerance: f64,
    seed: u64,
) -> Result<TheoryCheckReport> {
    let null = GroundTruth::sparse(2, 2, 0.5, 0.0, 0.4, Family::Gaussian)?;
    let s = efficient_information(&null, 0, &mut crate::rng::seeded(0))?.sqrt();
    let mut details = Vec::new();
    let mut worst: f64 = 0.0;
    for (k, &h) in h_list.iter().enumerate() {
        let truth = null.clone().with_theta(h / (n as f64).sqrt());
        let mx = fit_oracle(&truth, Which::X);
        let my = fit_oracle(&truth, Which::Y);
        let hits: usize = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = substream(seed, &[label_key("optimal_power"), k as u64, r as u64]);
                let d = generate_dataset(&truth, n, &mut rng)?;
                Ok(gcm_test(&d, &mx, &my, 0.05, Sidedness::Greater)?.reject as usize)
            })
            .collect::<Result<Vec<usize>>>()?
            .into_iter()
            .sum();
        let power = hits as f64 / reps as f64;
        let bound = optimal_power(h, s, 0.05);
        details.push(Detail::new(&format!("empirical_power_h={h}"), n, power));
        details.push(Detail::new(&format!("formula_power_h={h}"), n, bound));
        worst = worst.max((power - bound).abs());
    }
    Ok(TheoryCheckReport {
        name: "optimal_power".into(),
        metric: worst,
        threshold: tolerance,
        pass: worst <= tolerance,
        sample_sizes: vec![n],
        details,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;

    #[test]
    fn efficient_information_examples() {
        let g = GroundTruth::sparse(3, 2, 0.5, 0.0, 0.4, Family::Gaussian).unwrap();
        assert_eq!(efficient_information(&g, 0, &mut seeded(1)).unwrap(), 1.0);
        let b = GroundTruth::sparse(3, 2, 0.0, 0.0, 0.4, Family::Gaussian)
            .unwrap()
            .with_x_family(Family::Binomial);
        assert_abs_diff_eq!(
            efficient_information(&b, 500, &mut seeded(1)).unwrap(),
            0.25,
            epsilon = 1e-12
        );
    }

    #[test]
    fn optimal_power_examples() {
        assert_abs_diff_eq!(optimal_power(0.0, 1.0, 0.05), 0.05, epsilon = 1e-9);
        assert_abs_diff_eq!(optimal_power(Z95, 1.0, 0.05), 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(optimal_power(3.0, 1.0, 0.05), 0.9123, epsilon = 1e-4);
    }

    #[test]
    fn decreasing_is_strict() {
        assert!(decreasing(&[3.0, 2.0, 1.0]));
        assert!(!decreasing(&[3.0, 3.0, 1.0]));
        assert!(decreasing(&[1.0]));
    }
}
