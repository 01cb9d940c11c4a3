//! The distilled conditional randomization test with a learned law of `X | Z`,
//! its resampling-free normal approximation, and the normalized variant.

use rand::Rng;
use rand_distr::StandardNormal;

use super::gcm::{normalizer_of_products, product_residual_statistic};
use super::{check_alpha, residuals, CondLawX, FittedLaw, Sampler, Sidedness, TestResult};
use crate::error::{Error, Result};
use crate::learners::{ConditionalMean, VARIANCE_FLOOR};
use crate::model::Dataset;
use crate::stats::empirical_quantile;

/// Draws `X~ - mu_hat` for every row.
fn draw_centered<R: Rng + ?Sized>(law: &FittedLaw, rng: &mut R, out: &mut [f64]) {
    match law.sampler {
        Sampler::Gaussian => {
            for (o, v) in out.iter_mut().zip(&law.var) {
                let e: f64 = rng.sample(StandardNormal);
                *o = v.sqrt() * e;
            }
        }
        Sampler::Bernoulli => {
            for (o, &m) in out.iter_mut().zip(&law.mu) {
                let x = if rng.random::<f64>() < m { 1.0 } else { 0.0 };
                *o = x - m;
            }
        }
    }
}

/// `E|X~ - mu_hat|^3` under the fitted law at one row.
fn third_absolute_moment(law: &FittedLaw, i: usize) -> f64 {
    match law.sampler {
        Sampler::Gaussian => 2.0 * (2.0 / std::f64::consts::PI).sqrt() * law.var[i].powf(1.5),
        Sampler::Bernoulli => {
            let m = law.mu[i];
            m * (1.0 - m) * ((1.0 - m).powi(2) + m * m)
        }
    }
}

/// `(1/n) sum_i V_hat[X_i|Z_i] (y_i - mu_y_hat(Z_i))^2`, floored.
fn conditional_variance_of(var: &[f64], ry: &[f64]) -> f64 {
    let n = ry.len() as f64;
    let v = var.iter().zip(ry).map(|(v, r)| v * r * r).sum::<f64>() / n;
    v.max(VARIANCE_FLOOR)
}

/// Variance of the resampling distribution of the dCRT statistic.
pub fn dcrt_conditional_variance(law: &CondLawX, data: &Dataset, my: &dyn ConditionalMean) -> Result<f64> {
    let fitted = law.evaluate(data)?;
    let (_, ry) = residuals(data, law.mean, my)?;
    Ok(conditional_variance_of(&fitted.var, &ry))
}

/// Lyapunov ratio with exponent 1:
/// `sum_i |ry_i|^3 E|X~_i - mu_i|^3 / (n^{3/2} S^3)`.
fn lyapunov_ratio(law: &FittedLaw, ry: &[f64], s2: f64) -> f64 {
    let n = ry.len() as f64;
    let num: f64 = ry
        .iter()
        .enumerate()
        .map(|(i, r)| r.abs().powi(3) * third_absolute_moment(law, i))
        .sum();
    num / (n.powf(1.5) * s2.powf(1.5))
}

fn check_resamples(m: usize) -> Result<()> {
    if m < 1 {
        return Err(Error::InvalidParameter(
            "number of resamples M must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Resampling p-value `(1 + #{T_m >= T_obs}) / (M + 1)` on oriented statistics.
pub fn resampling_p_value(observed: f64, resampled: &[f64], side: Sidedness) -> f64 {
    let t = side.oriented(observed);
    let count = resampled.iter().filter(|&&s| side.oriented(s) >= t).count();
    (1 + count) as f64 / (resampled.len() + 1) as f64
}

/// Distilled CRT: `T = (1/sqrt n) sum (x - mu_x)(y - mu_y)`, compared with `M`
/// resamples of `X` drawn from the fitted law. Neither mean is refit.
pub fn dcrt_hat<R: Rng + ?Sized>(
    data: &Dataset,
    law: &CondLawX,
    my: &dyn ConditionalMean,
    m: usize,
    alpha: f64,
    side: Sidedness,
    rng: &mut R,
) -> Result<TestResult> {
    check_resamples(m)?;
    check_alpha(alpha)?;
    let fitted = law.evaluate(data)?;
    let (rx, ry) = residuals(data, law.mean, my)?;
    let observed = product_residual_statistic(&rx, &ry)?;
    let n = data.n();
    let root_n = (n as f64).sqrt();
    let mut centered = vec![0.0; n];
    let mut resampled = Vec::with_capacity(m);
    for _ in 0..m {
        draw_centered(&fitted, rng, &mut centered);
        let s: f64 = centered.iter().zip(&ry).map(|(a, b)| a * b).sum();
        resampled.push(s / root_n);
    }
    let p = resampling_p_value(observed, &resampled, side);
    let oriented: Vec<f64> = resampled.iter().map(|&s| side.oriented(s)).collect();
    let crit = empirical_quantile(&oriented, 1.0 - alpha);
    let s2 = conditional_variance_of(&fitted.var, &ry);
    let s = s2.sqrt();
    Ok(TestResult::new("dcrt_hat", observed, p, p <= alpha, alpha)
        .with("n_resamples", m)
        .with("conditional_variance", s2)
        .with("normalized_statistic", observed / s)
        .with("critical_value", crit)
        .with("normalized_critical_value", crit / s)
        .with("lyapunov_ratio", lyapunov_ratio(&fitted, &ry, s2))
        .with("resample_statistics", resampled))
}

/// Resampling-free version of the dCRT: reject when `T / S_dCRT` exceeds the
/// normal cutoff.
pub fn mx2_f_test(
    data: &Dataset,
    law: &CondLawX,
    my: &dyn ConditionalMean,
    alpha: f64,
    side: Sidedness,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    let fitted = law.evaluate(data)?;
    let (rx, ry) = residuals(data, law.mean, my)?;
    let t = product_residual_statistic(&rx, &ry)?;
    let s2 = conditional_variance_of(&fitted.var, &ry);
    let stat = t / s2.sqrt();
    let cutoff = side.normal_cutoff(alpha);
    Ok(TestResult::new(
        "mx2_f_test",
        stat,
        side.normal_p_value(stat),
        side.oriented(stat) > cutoff,
        alpha,
    )
    .with("unnormalized_statistic", t)
    .with("conditional_variance", s2)
    .with("critical_value", cutoff))
}

/// Normalized dCRT: the observed statistic is the GCM statistic, each resample
/// is normalized by its own product standard deviation, and the decision uses
/// the resampled `1 - alpha` quantile.
pub fn ndcrt_hat<R: Rng + ?Sized>(
    data: &Dataset,
    law: &CondLawX,
    my: &dyn ConditionalMean,
    m: usize,
    alpha: f64,
    side: Sidedness,
    rng: &mut R,
) -> Result<TestResult> {
    check_resamples(m)?;
    check_alpha(alpha)?;
    let fitted = law.evaluate(data)?;
    let (rx, ry) = residuals(data, law.mean, my)?;
    let gcm = super::gcm::gcm_from_residuals(&rx, &ry, alpha, side)?;
    let observed = gcm.statistic;
    let n = data.n();
    let root_n = (n as f64).sqrt();
    let mut centered = vec![0.0; n];
    let mut prods = vec![0.0; n];
    let mut resampled = Vec::with_capacity(m);
    let mut degenerate = 0usize;
    for _ in 0..m {
        draw_centered(&fitted, rng, &mut centered);
        for ((p, a), b) in prods.iter_mut().zip(&centered).zip(&ry) {
            *p = a * b;
        }
        let stat = match normalizer_of_products(&prods) {
            Ok(s) => prods.iter().sum::<f64>() / root_n / s,
            Err(_) => {
                degenerate += 1;
                0.0
            }
        };
        resampled.push(stat);
    }
    let oriented: Vec<f64> = resampled.iter().map(|&s| side.oriented(s)).collect();
    let crit = empirical_quantile(&oriented, 1.0 - alpha);
    let p = resampling_p_value(observed, &resampled, side);
    Ok(
        TestResult::new("ndcrt_hat", observed, p, side.oriented(observed) > crit, alpha)
            .with("n_resamples", m)
            .with("critical_value", crit)
            .with("degenerate_resamples", degenerate)
            .with("normal_p_value", side.normal_p_value(observed))
            .with("resample_statistics", resampled),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::gcm::gcm_from_residuals;
    use crate::learners::{FittedValues, VarianceEstimator};
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = seeded(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        Dataset::new(x, y, DMatrix::zeros(n, 1), crate::model::Family::Gaussian).unwrap()
    }

    #[test]
    fn p_value_examples() {
        assert_eq!(resampling_p_value(2.0, &[1.0, 1.0, 1.0], Sidedness::Greater), 0.25);
        assert_eq!(resampling_p_value(0.0, &[0.0, 0.0], Sidedness::Greater), 1.0);
        assert_eq!(resampling_p_value(-3.0, &[1.0, -1.0, 2.0], Sidedness::TwoSided), 0.25);
    }

    #[test]
    fn p_value_grid_and_monotone() {
        let res = [0.3, -1.2, 0.8, 2.2, -0.1];
        let mut last = 1.0;
        for k in 0..60 {
            let t = -3.0 + 0.1 * k as f64;
            let p = resampling_p_value(t, &res, Sidedness::Greater);
            assert!(p <= last);
            assert_abs_diff_eq!((p * 6.0).round(), p * 6.0, epsilon = 1e-12);
            last = p;
        }
    }

    #[test]
    fn conditional_variance_examples() {
        assert_eq!(conditional_variance_of(&[1.0, 1.0], &[1.0, 1.0]), 1.0);
        assert_eq!(conditional_variance_of(&[2.0, 2.0], &[0.0, 0.0]), VARIANCE_FLOOR);
    }

    #[test]
    fn residual_squared_identity() {
        let d = toy(50, 1);
        let mx = FittedValues(vec![0.1; 50]);
        let my = FittedValues(vec![-0.2; 50]);
        let law = CondLawX::new(&mx, VarianceEstimator::residual_squared(), Sampler::Gaussian);
        let s2 = dcrt_conditional_variance(&law, &d, &my).unwrap();
        let (rx, ry) = residuals(&d, &mx, &my).unwrap();
        let g = gcm_from_residuals(&rx, &ry, 0.05, Sidedness::Greater).unwrap();
        let s = g.diagnostic_f64("normalizer").unwrap();
        let mp = g.diagnostic_f64("mean_product").unwrap();
        assert_abs_diff_eq!(s2, s * s + mp * mp, epsilon = 1e-12);
    }

    #[test]
    fn mx2_thresholds() {
        // A one-row dataset lets the normalized statistic be set exactly.
        for (stat, reject) in [(1.70, true), (1.60, false)] {
            let d = Dataset::new(
                vec![stat],
                vec![1.0],
                DMatrix::zeros(1, 1),
                crate::model::Family::Gaussian,
            )
            .unwrap();
            let zero = FittedValues(vec![0.0]);
            let law = CondLawX::new(&zero, VarianceEstimator::constant(1.0), Sampler::Gaussian);
            let r = mx2_f_test(&d, &law, &zero, 0.05, Sidedness::Greater).unwrap();
            assert_abs_diff_eq!(r.statistic, stat, epsilon = 1e-15);
            assert_eq!(r.reject, reject);
        }
    }

    #[test]
    fn replay_exact_and_needs_resamples() {
        let d = toy(40, 2);
        let zero = FittedValues(vec![0.0; 40]);
        let law = CondLawX::new(&zero, VarianceEstimator::constant(1.0), Sampler::Gaussian);
        let a = dcrt_hat(&d, &law, &zero, 50, 0.05, Sidedness::Greater, &mut seeded(3)).unwrap();
        let b = dcrt_hat(&d, &law, &zero, 50, 0.05, Sidedness::Greater, &mut seeded(3)).unwrap();
        assert_eq!(
            a.diagnostics["resample_statistics"],
            b.diagnostics["resample_statistics"]
        );
        assert_eq!(a.p_value, b.p_value);
        assert!(matches!(
            dcrt_hat(&d, &law, &zero, 0, 0.05, Sidedness::Greater, &mut seeded(3)),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn ndcrt_observed_is_gcm_statistic() {
        let d = toy(60, 4);
        let mx = FittedValues(vec![0.05; 60]);
        let my = FittedValues(vec![0.0; 60]);
        let law = CondLawX::new(&mx, VarianceEstimator::constant(1.0), Sampler::Gaussian);
        let r = ndcrt_hat(&d, &law, &my, 30, 0.05, Sidedness::Greater, &mut seeded(5)).unwrap();
        let g = crate::inference::gcm_test(&d, &mx, &my, 0.05, Sidedness::Greater).unwrap();
        assert_eq!(r.statistic.to_bits(), g.statistic.to_bits());
    }

    #[test]
    fn ndcrt_counts_degenerate_resamples() {
        // Two rows with Bernoulli(0.5) resampling and ry = (1, 1): a resample is
        // degenerate exactly when both draws agree; otherwise the products
        // cancel, so every resampled statistic is zero.
        let d = Dataset::new(
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            DMatrix::zeros(2, 1),
            crate::model::Family::Gaussian,
        )
        .unwrap();
        let mx = FittedValues(vec![0.5, 0.5]);
        let my = FittedValues(vec![0.0, 0.0]);
        let law = CondLawX::new(&mx, VarianceEstimator::bernoulli(), Sampler::Bernoulli);
        let r = ndcrt_hat(&d, &law, &my, 200, 0.05, Sidedness::Greater, &mut seeded(6)).unwrap();
        let count = r.diagnostic_f64("degenerate_resamples").unwrap();
        let zeros = r.diagnostics["resample_statistics"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|v| v.as_f64() == Some(0.0))
            .count();
        assert!(count > 50.0 && count < 150.0, "{count}");
        assert_eq!(zeros, 200);
    }

    #[test]
    fn bernoulli_sampler_requires_probabilities() {
        let d = toy(5, 7);
        let bad = FittedValues(vec![0.5, 0.5, 1.0, 0.5, 0.5]);
        let law = CondLawX::new(&bad, VarianceEstimator::bernoulli(), Sampler::Bernoulli);
        assert!(law.evaluate(&d).is_err());
    }
}
