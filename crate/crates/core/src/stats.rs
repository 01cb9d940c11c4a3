//! Small numerical helpers shared across modules.

use statrs::distribution::{ContinuousCDF, Normal};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Standard normal upper tail `1 - Phi(x)`, accurate in the far tail.
pub fn norm_sf(x: f64) -> f64 {
    std_normal().sf(x)
}

/// Standard normal quantile function.
pub fn norm_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Variance with the divide-by-n convention.
pub fn var_n(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Inverse-ECDF quantile: the smallest sample value `t` with `F_M(t) >= q`.
pub fn empirical_quantile(sample: &[f64], q: f64) -> f64 {
    assert!(!sample.is_empty(), "quantile of an empty sample");
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    let k = ((q * m as f64).ceil() as usize).clamp(1, m);
    sorted[k - 1]
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    if m % 2 == 1 {
        s[m / 2]
    } else {
        0.5 * (s[m / 2 - 1] + s[m / 2])
    }
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `sample` and `cdf`.
pub fn ks_distance<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Monte Carlo standard error of a proportion.
pub fn binomial_se(rate: f64, reps: usize) -> f64 {
    (rate * (1.0 - rate) / reps as f64).sqrt()
}

/// Ordinary least squares slope of `y` on `x` (with intercept).
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_reference_values() {
        assert_abs_diff_eq!(norm_quantile(0.95), 1.6448536269514722, epsilon = 1e-9);
        assert_abs_diff_eq!(norm_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(norm_sf(1.6448536269514722), 0.05, epsilon = 1e-9);
    }

    #[test]
    fn quantile_is_inverse_ecdf() {
        let s = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(empirical_quantile(&s, 0.5), 2.0);
        assert_eq!(empirical_quantile(&s, 0.51), 3.0);
        assert_eq!(empirical_quantile(&s, 1.0), 4.0);
        assert_eq!(empirical_quantile(&s, 0.0), 1.0);
    }

    #[test]
    fn ks_of_perfect_grid_is_small() {
        let m = 1000;
        let s: Vec<f64> = (0..m).map(|i| norm_quantile((i as f64 + 0.5) / m as f64)).collect();
        assert!(ks_distance(&s, norm_cdf) <= 0.5 / m as f64 + 1e-9);
    }

    #[test]
    fn logistic_is_stable() {
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(-800.0) >= 0.0);
        assert!(logistic(800.0) <= 1.0);
        assert_abs_diff_eq!(logistic(2.0) + logistic(-2.0), 1.0, epsilon = 1e-15);
    }
}
