//! Monte Carlo checks of the tests' null calibration, agreement and power.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use citest::harness::{apply_method, method_by_name};
use citest::inference::{
    dcrt_hat, error_metrics, gcm_test, marginal_gcm, maxway_crt, mx2_f_test, ndcrt_hat, CondLawX, ErrorMetrics,
    MaxwayOptions, Sampler, Sidedness,
};
use citest::learners::kernel::default_sobolev_lambda;
use citest::learners::{
    fit_intercept_only, fit_kernel_ridge_sobolev, fit_lasso_cv, fit_oracle, fit_post_lasso, LassoConfig,
    VarianceEstimator, Which,
};
use citest::model::{
    generate_dataset, generate_point_null_dataset, generate_semi_supervised, Dataset, Family, GroundTruth,
};
use citest::rng::{label_key, substream};
use citest::stats::{binomial_se, ks_distance, mean, median, norm_cdf, norm_quantile};

const ALPHA: f64 = 0.05;

fn replicate<T: Send>(reps: usize, label: &str, f: impl Fn(&mut citest::rng::SimRng) -> T + Sync) -> Vec<T> {
    (0..reps)
        .into_par_iter()
        .map(|r| f(&mut substream(11, &[label_key(label), r as u64])))
        .collect()
}

fn rate(decisions: &[bool]) -> f64 {
    decisions.iter().filter(|&&d| d).count() as f64 / decisions.len() as f64
}

#[test]
fn oracle_gcm_holds_level_on_the_point_null() {
    let truth = GroundTruth::sparse(10, 5, 0.3, 0.0, 0.4, Family::Gaussian).unwrap();
    let mx = fit_oracle(&truth, Which::X);
    let my = fit_oracle(&truth, Which::Y);
    let rejects = replicate(2000, "oracle", |rng| {
        let d = generate_point_null_dataset(&truth, 200, rng).unwrap();
        gcm_test(&d, &mx, &my, ALPHA, Sidedness::TwoSided).unwrap().reject
    });
    let r = rate(&rejects);
    assert!((0.035..=0.065).contains(&r), "oracle GCM size {r}");
}

/// `mu_x(z) = sin(pi z / 2)` and `mu_y(z) = z^2`, both vanishing at zero.
fn sobolev_null(n: usize, rng: &mut impl Rng) -> Dataset {
    let z: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let x: Vec<f64> = z
        .iter()
        .map(|t| (std::f64::consts::FRAC_PI_2 * t).sin() + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let y: Vec<f64> = z.iter().map(|t| t * t + rng.sample::<f64, _>(StandardNormal)).collect();
    Dataset::new(x, y, DMatrix::from_vec(n, 1, z), Family::Gaussian).unwrap()
}

#[test]
fn kernel_ridge_gcm_statistic_is_standard_normal_under_the_null() {
    let n = 500;
    let stats = replicate(1000, "kernel", |rng| {
        let d = sobolev_null(n, rng);
        let z: Vec<f64> = d.z().column(0).iter().copied().collect();
        let lambda = default_sobolev_lambda(n);
        let mx = fit_kernel_ridge_sobolev(&z, d.x(), lambda).unwrap();
        let my = fit_kernel_ridge_sobolev(&z, d.y(), lambda).unwrap();
        gcm_test(&d, &mx, &my, ALPHA, Sidedness::TwoSided).unwrap().statistic
    });
    let ks = ks_distance(&stats, norm_cdf);
    assert!(ks < 0.05, "KS distance {ks}");
}

#[test]
fn dcrt_with_the_true_law_is_super_uniform() {
    let truth = GroundTruth::sparse(20, 5, 0.3, 0.0, 0.4, Family::Gaussian).unwrap();
    let mx = fit_oracle(&truth, Which::X);
    let p_values = replicate(2000, "true-law", |rng| {
        let d = generate_point_null_dataset(&truth, 200, rng).unwrap();
        let my = fit_intercept_only(d.y(), Family::Gaussian, d.p()).unwrap();
        let law = CondLawX::new(&mx, VarianceEstimator::constant(1.0), Sampler::Gaussian);
        dcrt_hat(&d, &law, &my, 199, ALPHA, Sidedness::Greater, rng)
            .unwrap()
            .p_value
    });
    for t in [0.05, 0.1, 0.2] {
        let r = p_values.iter().filter(|&&p| p <= t).count() as f64 / p_values.len() as f64;
        assert!(r <= t + 0.015, "P(p <= {t}) = {r}");
    }
}

#[test]
fn mx2_f_test_matches_dcrt_with_many_resamples() {
    let n = 400;
    let truth = GroundTruth::sparse(10, 5, 0.3, 2.0 / (n as f64).sqrt(), 0.4, Family::Gaussian).unwrap();
    let mx = fit_oracle(&truth, Which::X);
    let my = fit_oracle(&truth, Which::Y);
    let agree = replicate(200, "mx2", |rng| {
        let d = generate_dataset(&truth, n, rng).unwrap();
        let law = CondLawX::new(&mx, VarianceEstimator::residual_squared(), Sampler::Gaussian);
        let a = mx2_f_test(&d, &law, &my, ALPHA, Sidedness::Greater).unwrap().reject;
        let b = dcrt_hat(&d, &law, &my, 10_000, ALPHA, Sidedness::Greater, rng)
            .unwrap()
            .reject;
        a == b
    });
    let r = rate(&agree);
    assert!(r >= 0.99, "agreement {r}");
}

#[test]
fn ndcrt_critical_value_is_near_the_normal_quantile_and_agrees_with_gcm() {
    let n = 2000;
    let z95 = norm_quantile(0.95);
    let mut crits = Vec::new();
    let mut agree = Vec::new();
    for (label, theta) in [("ndcrt-null", 0.0), ("ndcrt-alt", 2.0 / (n as f64).sqrt())] {
        let truth = GroundTruth::sparse(10, 5, 0.3, theta, 0.4, Family::Gaussian).unwrap();
        let mx = fit_oracle(&truth, Which::X);
        let my = fit_oracle(&truth, Which::Y);
        let runs: Vec<(f64, bool)> = replicate(60, label, |rng| {
            let d = generate_dataset(&truth, n, rng).unwrap();
            let law = CondLawX::new(&mx, VarianceEstimator::constant(1.0), Sampler::Gaussian);
            let r = ndcrt_hat(&d, &law, &my, 400, ALPHA, Sidedness::Greater, rng).unwrap();
            let g = gcm_test(&d, &mx, &my, ALPHA, Sidedness::Greater).unwrap();
            (r.diagnostic_f64("critical_value").unwrap(), r.reject == g.reject)
        });
        for (c, a) in runs {
            crits.push(c);
            agree.push(a);
        }
    }
    let gap = (mean(&crits) - z95).abs();
    assert!(gap < 0.08, "mean critical value off by {gap}");
    let r = rate(&agree);
    assert!(r >= 0.95, "agreement {r}");
}

#[test]
fn marginal_gcm_is_calibrated_without_confounding_and_detects_identical_variables() {
    let truth = GroundTruth::sparse(5, 5, 0.0, 0.0, 0.4, Family::Gaussian).unwrap();
    let rejects = replicate(1000, "marginal", |rng| {
        let d = generate_dataset(&truth, 200, rng).unwrap();
        marginal_gcm(&d, ALPHA, Sidedness::TwoSided).unwrap().reject
    });
    let r = rate(&rejects);
    assert!(
        (r - ALPHA).abs() <= 3.0 * binomial_se(ALPHA, 1000),
        "marginal GCM size {r}"
    );

    let mut rng = substream(11, &[label_key("identical")]);
    let d = generate_dataset(&truth, 200, &mut rng).unwrap();
    let same = Dataset::new(d.x().to_vec(), d.x().to_vec(), d.z().clone(), Family::Gaussian).unwrap();
    let t = marginal_gcm(&same, ALPHA, Sidedness::TwoSided).unwrap();
    assert!(t.p_value < 1e-10, "p = {}", t.p_value);
}

#[test]
fn maxway_holds_level_with_an_unlabeled_sample() {
    let truth = GroundTruth::sparse(50, 5, 0.0, 0.0, 0.4, Family::Gaussian).unwrap();
    let opts = MaxwayOptions::default();
    let rejects = replicate(400, "maxway", |rng| {
        let semi = generate_semi_supervised(&truth, 100, 100, true, rng).unwrap();
        maxway_crt(&semi, 200, ALPHA, &opts, rng).unwrap().reject
    });
    let r = rate(&rejects);
    assert!(
        (r - ALPHA).abs() <= 3.0 * binomial_se(ALPHA, rejects.len()),
        "Maxway size {r}"
    );
}

#[test]
fn supervised_maxway_has_less_power_than_post_lasso_dcrt() {
    let truth = GroundTruth::sparse(50, 5, 0.3, 0.25, 0.4, Family::Gaussian).unwrap();
    let maxway = method_by_name("maxway", 200).unwrap();
    let dcrt = method_by_name("dcrt-plasso", 200).unwrap();
    let pairs = replicate(200, "maxway-power", |rng| {
        let d = generate_dataset(&truth, 200, rng).unwrap();
        let run = |spec, rng: &mut citest::rng::SimRng| {
            apply_method(spec, &d, Family::Gaussian, ALPHA, Sidedness::Greater, 5, rng)
                .unwrap()
                .reject
        };
        (run(&maxway, rng), run(&dcrt, rng))
    });
    let (a, b): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
    assert!(
        rate(&a) < rate(&b),
        "Maxway power {} vs post-lasso dCRT {}",
        rate(&a),
        rate(&b)
    );
}

#[test]
fn lasso_error_product_shrinks_with_n() {
    let truth = GroundTruth::sparse(100, 5, 0.3, 0.0, 0.4, Family::Gaussian).unwrap();
    let cfg = LassoConfig::default();
    let products: Vec<f64> = [200, 400, 800]
        .into_iter()
        .map(|n| {
            let metrics: Vec<ErrorMetrics> = replicate(20, &format!("metrics-{n}"), |rng| {
                let d = generate_dataset(&truth, n, rng).unwrap();
                let mx = fit_lasso_cv(d.z(), d.x(), Family::Gaussian, 5, &cfg, rng)
                    .unwrap()
                    .model;
                let my = fit_post_lasso(d.z(), d.y(), Family::Gaussian, 5, &cfg, rng)
                    .unwrap()
                    .model;
                let law = CondLawX::new(&mx, VarianceEstimator::residual_squared(), Sampler::Gaussian);
                error_metrics(&d, &truth, &mx, &my, &law).unwrap()
            });
            let prods: Vec<f64> = metrics.iter().map(|m| m.e_nx * m.e_ny).collect();
            median(&prods)
        })
        .collect();
    assert!(products.windows(2).all(|w| w[1] < w[0]), "error products {products:?}");
}
