use nalgebra::DMatrix;
use proptest::prelude::*;

use citest::inference::dcrt::resampling_p_value;
use citest::inference::{
    dcrt_conditional_variance, dcrt_hat, gcm_from_residuals, gcm_normalizer, product_residual_statistic, CondLawX,
    Sampler, Sidedness,
};
use citest::learners::lasso::gaussian_kkt;
use citest::learners::{
    fit_intercept_only, fit_lasso_cv, variance_of_x_given_z, ConditionalMean, FittedValues, LassoConfig,
    VarianceEstimator,
};
use citest::model::{ar1_covariance, generate_dataset, sample_ar1_gaussian, Dataset, Family, GroundTruth};
use citest::rng::seeded;

/// Values bounded away from zero so the variance floor never binds.
fn residual() -> impl Strategy<Value = f64> {
    (prop::bool::ANY, 1e-3f64..10.0).prop_map(|(neg, m)| if neg { -m } else { m })
}

fn residual_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(residual(), n),
            prop::collection::vec(-10f64..10.0, n),
        )
    })
}

/// Data whose residuals against zero means are exactly `rx`, `ry`.
fn residual_data(rx: &[f64], ry: &[f64]) -> Dataset {
    let n = rx.len();
    Dataset::new(rx.to_vec(), ry.to_vec(), DMatrix::zeros(n, 1), Family::Gaussian).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn dcrt_variance_exceeds_gcm_variance_by_squared_mean_product((rx, ry) in residual_pair()) {
        let prods: Vec<f64> = rx.iter().zip(&ry).map(|(a, b)| a * b).collect();
        let n = prods.len() as f64;
        let mean = prods.iter().sum::<f64>() / n;
        let mean_sq = prods.iter().map(|p| p * p).sum::<f64>() / n;
        // Constant products are a degenerate normalizer, covered elsewhere.
        prop_assume!(mean_sq - mean * mean > 1e-8 * mean_sq.max(1.0));
        let data = residual_data(&rx, &ry);
        let zero = FittedValues(vec![0.0; rx.len()]);
        let law = CondLawX::new(&zero, VarianceEstimator::residual_squared(), Sampler::Gaussian);
        let s2_dcrt = dcrt_conditional_variance(&law, &data, &zero).unwrap();
        let s_gcm = gcm_normalizer(&rx, &ry).unwrap();
        let lhs = s2_dcrt - s_gcm * s_gcm;
        prop_assert!((lhs - mean * mean).abs() <= 1e-12 * mean_sq.max(1.0), "lhs={lhs} mean^2={}", mean * mean);
    }

    #[test]
    fn gcm_statistic_is_symmetric((rx, ry) in residual_pair()) {
        let a = gcm_from_residuals(&rx, &ry, 0.05, Sidedness::TwoSided);
        let b = gcm_from_residuals(&ry, &rx, 0.05, Sidedness::TwoSided);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.statistic.to_bits(), b.statistic.to_bits());
                prop_assert_eq!(a.p_value.to_bits(), b.p_value.to_bits());
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "symmetry broken on the error path"),
        }
    }

    #[test]
    fn product_statistic_scales_exactly_by_powers_of_two((rx, ry) in residual_pair(), k in -8i32..8) {
        let c = 2f64.powi(k);
        let scaled: Vec<f64> = rx.iter().map(|v| c * v).collect();
        let t = product_residual_statistic(&rx, &ry).unwrap();
        let ts = product_residual_statistic(&scaled, &ry).unwrap();
        prop_assert_eq!(ts.to_bits(), (c * t).to_bits());
    }

    #[test]
    fn product_statistic_is_linear_in_each_argument((rx, ry) in residual_pair(), c in -5f64..5.0) {
        let t = product_residual_statistic(&rx, &ry).unwrap();
        let scaled: Vec<f64> = ry.iter().map(|v| c * v).collect();
        let ts = product_residual_statistic(&rx, &scaled).unwrap();
        let scale = rx.iter().zip(&ry).map(|(a, b)| (a * b).abs()).sum::<f64>().max(1.0);
        prop_assert!((ts - c * t).abs() <= 1e-12 * scale * c.abs().max(1.0));
    }

    #[test]
    fn p_value_lies_on_grid_and_decreases_in_observed(
        resampled in prop::collection::vec(-4f64..4.0, 1..80),
        t1 in -5f64..5.0,
        dt in 0f64..3.0,
        two_sided in prop::bool::ANY,
    ) {
        let side = if two_sided { Sidedness::TwoSided } else { Sidedness::Greater };
        let m = resampled.len();
        let t2 = if two_sided { t1.abs() + dt } else { t1 + dt };
        let t1 = if two_sided { t1.abs() } else { t1 };
        let p1 = resampling_p_value(t1, &resampled, side);
        let p2 = resampling_p_value(t2, &resampled, side);
        prop_assert!(p2 <= p1);
        for p in [p1, p2] {
            let k = p * (m + 1) as f64;
            prop_assert!((k - k.round()).abs() < 1e-9 && k.round() >= 1.0 && p <= 1.0);
        }
    }

    #[test]
    fn resampling_is_replay_exact(seed in any::<u64>()) {
        let truth = GroundTruth::sparse(5, 2, 0.4, 0.0, 0.3, Family::Gaussian).unwrap();
        let d = generate_dataset(&truth, 40, &mut seeded(seed)).unwrap();
        let mx = FittedValues(d.z().column(0).iter().map(|v| 0.4 * v).collect());
        let my = FittedValues(vec![0.0; 40]);
        let law = CondLawX::new(&mx, VarianceEstimator::constant(1.0), Sampler::Gaussian);
        let a = dcrt_hat(&d, &law, &my, 30, 0.05, Sidedness::Greater, &mut seeded(seed ^ 1)).unwrap();
        let b = dcrt_hat(&d, &law, &my, 30, 0.05, Sidedness::Greater, &mut seeded(seed ^ 1)).unwrap();
        prop_assert_eq!(a.diagnostics.get("resample_statistics"), b.diagnostics.get("resample_statistics"));
        prop_assert_eq!(a.p_value, b.p_value);
    }

    #[test]
    fn intercept_only_is_affine_equivariant(
        target in prop::collection::vec(-100f64..100.0, 1..50),
        a in -4f64..4.0,
        b in -10f64..10.0,
    ) {
        let z = DMatrix::zeros(target.len(), 2);
        let base = fit_intercept_only(&target, Family::Gaussian, 2).unwrap().predict(&z);
        let moved: Vec<f64> = target.iter().map(|t| a * t + b).collect();
        let fit = fit_intercept_only(&moved, Family::Gaussian, 2).unwrap().predict(&z);
        for (f, g) in fit.iter().zip(&base) {
            prop_assert!((f - (a * g + b)).abs() <= 1e-9 * (1.0 + (a * g + b).abs()));
        }
    }

    #[test]
    fn variance_estimates_are_positive(
        x in prop::collection::vec(-3f64..3.0, 1..40),
        c in 0f64..2.0,
    ) {
        let mu = x.clone();
        for est in [VarianceEstimator::residual_squared(), VarianceEstimator::constant(c)] {
            let v = variance_of_x_given_z(&est, &x, &mu).unwrap();
            prop_assert!(v.iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn ar1_covariance_is_a_correlation_matrix(p in 1usize..12, rho in -0.95f64..0.95) {
        let s = ar1_covariance(p, rho).unwrap();
        for i in 0..p {
            prop_assert_eq!(s[(i, i)], 1.0);
            for j in 0..p {
                prop_assert_eq!(s[(i, j)], s[(j, i)]);
            }
        }
        prop_assert!(s.cholesky().is_some());
    }

    #[test]
    fn ar1_sampler_is_a_function_of_the_seed(seed in any::<u64>(), rho in 0f64..0.9) {
        let a = sample_ar1_gaussian(20, 4, rho, &mut seeded(seed)).unwrap();
        let b = sample_ar1_gaussian(20, 4, rho, &mut seeded(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cv_lasso_fits_carry_a_kkt_certificate(seed in any::<u64>(), nu in 0f64..1.0, rho in 0f64..0.8) {
        let truth = GroundTruth::sparse(40, 4, nu, 0.0, rho, Family::Gaussian).unwrap();
        let d = generate_dataset(&truth, 120, &mut seeded(seed)).unwrap();
        let cv = fit_lasso_cv(d.z(), d.x(), Family::Gaussian, 5, &LassoConfig::default(), &mut seeded(seed ^ 7)).unwrap();
        let (inactive, active) = gaussian_kkt(d.z(), d.x(), &cv.model, cv.lambda_min).max_violation();
        prop_assert!(inactive <= 1e-6 && active <= 1e-6, "inactive {inactive}, active {active}");
    }
}
