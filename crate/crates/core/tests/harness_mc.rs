use citest::harness::calibrate::{marginal_rejection_rate, oracle_power};
use citest::harness::{
    calibrate_theta_max, marginal_association_profile, method_by_name, run_point, DesignKind, MarginalDesign, SimConfig,
};
use citest::model::Family;
use citest::stats::{binomial_se, median, norm_cdf, norm_quantile};

const REPS: usize = 1000;

#[test]
fn marginal_rate_is_nominal_without_confounding_and_grows_with_it() {
    let rates: Vec<f64> = [0.0, 0.05, 0.1, 0.2, 0.4]
        .into_iter()
        .map(|nu| marginal_rejection_rate(200, 5, 0.4, nu, Family::Gaussian, REPS, 5).unwrap())
        .collect();
    assert!(
        (rates[0] - 0.05).abs() <= 3.0 * binomial_se(0.05, REPS),
        "rate at nu=0: {}",
        rates[0]
    );
    assert!(rates.windows(2).all(|w| w[1] >= w[0]), "rates {rates:?}");
    assert!(rates[4] > 0.9, "rates {rates:?}");
}

#[test]
fn oracle_power_is_nominal_at_zero_signal() {
    let r = oracle_power(200, 5, 0.4, 0.2, 0.0, Family::Gaussian, REPS, 6).unwrap();
    assert!((r - 0.05).abs() <= 3.0 * binomial_se(0.05, REPS), "oracle size {r}");
}

/// Two-sided power of the oracle GCM in the Gaussian model: the product
/// `e (theta e + eps)` has mean `theta` and variance `1 + 2 theta^2`.
fn oracle_power_formula(theta: f64, n: usize) -> f64 {
    let z = norm_quantile(0.975);
    let shift = (n as f64).sqrt() * theta / (1.0 + 2.0 * theta * theta).sqrt();
    norm_cdf(shift - z) + norm_cdf(-shift - z)
}

#[test]
fn theta_max_matches_the_normal_approximation_in_low_dimension() {
    let n = 200;
    let cal = calibrate_theta_max(n, 2, 2, 0.4, 0.3, Family::Gaussian, REPS, 7).unwrap();
    let (mut lo, mut hi) = (0.0, 2.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if oracle_power_formula(mid, n) < 0.99 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!(
        (cal.value - lo).abs() <= 0.05,
        "calibrated {} vs formula {lo}",
        cal.value
    );
}

#[test]
fn li2022_design_has_strong_marginal_association() {
    let rates = marginal_association_profile(&MarginalDesign::li2022(1), 200, 1).unwrap();
    assert_eq!(rates.len(), 1);
    assert!(rates[0] >= 0.9, "rate {}", rates[0]);
}

#[test]
fn variables_far_from_the_signals_show_no_inflation() {
    let reps = 100;
    let design = MarginalDesign::liu2022(false, 1);
    let rates = marginal_association_profile(&design, reps, 2).unwrap();
    let far = &rates[100..];
    let band = 3.0 * binomial_se(0.05, reps);
    assert!((median(far) - 0.05).abs() <= band, "median far rate {}", median(far));
    let outside = far.iter().filter(|r| (*r - 0.05).abs() > band).count();
    assert!(
        outside as f64 <= 0.01 * far.len() as f64,
        "{outside} far variables outside 3 sigma"
    );
}

#[test]
fn disjoint_supports_without_correlation_are_nominal() {
    let mut coef_x = vec![0.0; 10];
    let mut coef_y = vec![0.0; 10];
    coef_x[..5].fill(0.5);
    coef_y[5..].fill(0.5);
    let design = MarginalDesign {
        name: "disjoint".into(),
        n: 200,
        p: 10,
        rho: 0.0,
        family: Family::Gaussian,
        normalize_columns: false,
        kind: DesignKind::Confounded { coef_x, coef_y },
    };
    let rates = marginal_association_profile(&design, REPS, 3).unwrap();
    assert!(
        (rates[0] - 0.05).abs() <= 3.0 * binomial_se(0.05, REPS),
        "rate {}",
        rates[0]
    );
}

#[test]
fn simulation_points_replay_exactly() {
    let cfg = SimConfig {
        n: 100,
        p: 50,
        nu: 0.2,
        n_reps: 20,
        methods: ["gcm-lasso", "dcrt-plasso", "gcm-oracle"]
            .iter()
            .map(|m| method_by_name(m, 50).unwrap())
            .collect(),
        ..SimConfig::default()
    };
    let a = run_point(&cfg).unwrap();
    let b = run_point(&cfg).unwrap();
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.method, y.method);
        assert_eq!(x.rejection_rate.to_bits(), y.rejection_rate.to_bits());
        assert_eq!(x.mean_p.to_bits(), y.mean_p.to_bits());
    }
}
