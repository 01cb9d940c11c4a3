//! Conditional weak law, conditional central limit theorem and convergence of
//! conditional quantiles, checked on triangular arrays whose terms are
//! independent given a randomly drawn conditioning variable.
//!
//! The conditioning variable fixes a center `mu_i` and a scale `sigma_i` for
//! every term; given it, `W_i = mu_i + sigma_i * xi_i` with `xi_i` i.i.d.
//! from a base law.

use rand::Rng;
use rand_distr::{Cauchy, Distribution, Exp1, StandardNormal, StudentT, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{decreasing, Detail, TheoryCheckReport};
use crate::error::{Error, Result};
use crate::rng::{label_key, substream, SimRng};
use crate::stats::{empirical_quantile, ks_distance, median, norm_cdf, norm_quantile};

/// Base law of the standardized terms `xi_i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law", content = "df")]
pub enum TermLaw {
    /// Uniform on `[-sqrt(3), sqrt(3)]`, unit variance.
    Uniform,
    Gaussian,
    /// Student t; the variance is finite only for `df > 2`.
    StudentT(f64),
    Cauchy,
    /// `xi_i = 0`: the terms equal their conditional means.
    Zero,
}

impl TermLaw {
    fn variance(self) -> Option<f64> {
        match self {
            TermLaw::Uniform | TermLaw::Gaussian => Some(1.0),
            TermLaw::StudentT(df) if df > 2.0 => Some(df / (df - 2.0)),
            TermLaw::StudentT(_) | TermLaw::Cauchy => None,
            TermLaw::Zero => Some(0.0),
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            TermLaw::StudentT(df) if !(df > 0.0) => {
                Err(Error::InvalidParameter(format!("df must be positive, got {df}")))
            }
            _ => Ok(()),
        }
    }

    fn sampler(self) -> Box<dyn Fn(&mut SimRng) -> f64 + Sync> {
        match self {
            TermLaw::Uniform => {
                let u = Uniform::new_inclusive(-3f64.sqrt(), 3f64.sqrt()).expect("valid bounds");
                Box::new(move |r| u.sample(r))
            }
            TermLaw::Gaussian => Box::new(|r| StandardNormal.sample(r)),
            TermLaw::StudentT(df) => {
                let t = StudentT::new(df).expect("validated df");
                Box::new(move |r| t.sample(r))
            }
            TermLaw::Cauchy => {
                let c = Cauchy::new(0.0, 1.0).expect("unit scale");
                Box::new(move |r| c.sample(r))
            }
            TermLaw::Zero => Box::new(|_| 0.0),
        }
    }
}

/// How the conditioning variable fixes centers and scales.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// `mu_i = 0`, `sigma_i = 1`: the unconditional case.
    Constant,
    /// `mu_i ~ N(0, 1)` and `sigma_i = 0.5 + Exp(1)`, drawn once per
    /// conditioning draw.
    RandomScales,
}

fn draw_conditioning(kind: Conditioning, n: usize, rng: &mut SimRng) -> (Vec<f64>, Vec<f64>) {
    match kind {
        Conditioning::Constant => (vec![0.0; n], vec![1.0; n]),
        Conditioning::RandomScales => {
            let mu = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            let sigma = (0..n)
                .map(|_| {
                    let e: f64 = Exp1.sample(rng);
                    0.5 + e
                })
                .collect();
            (mu, sigma)
        }
    }
}

/// Conditional CLT check.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CltConfig {
    pub n: usize,
    pub conditioning_draws: usize,
    /// Sums drawn per conditioning draw to estimate the conditional law.
    pub inner_reps: usize,
    pub law: TermLaw,
    pub conditioning: Conditioning,
    /// Largest allowed mean KS distance.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for CltConfig {
    fn default() -> Self {
        CltConfig {
            n: 5000,
            conditioning_draws: 10,
            inner_reps: 2000,
            law: TermLaw::Uniform,
            conditioning: Conditioning::RandomScales,
            threshold: 0.05,
            seed: 1,
        }
    }
}

impl CltConfig {
    /// Cauchy terms: no moments, the check must fail.
    pub fn heavy_tailed() -> CltConfig {
        CltConfig {
            law: TermLaw::Cauchy,
            ..CltConfig::default()
        }
    }
}

/// Mean over conditioning draws of the KS distance between the conditional
/// law of the standardized sum and `N(0, 1)`.
///
/// Sums are centered at their conditional mean and scaled by the conditional
/// standard deviation `S_n`. When the base law has no variance, the empirical
/// standard deviation of the simulated sums stands in for `S_n`.
pub fn check_conditional_clt(cfg: &CltConfig) -> Result<TheoryCheckReport> {
    cfg.law.validate()?;
    if cfg.n == 0 || cfg.conditioning_draws == 0 || cfg.inner_reps < 2 {
        return Err(Error::InvalidParameter(
            "n, conditioning_draws and inner_reps must be positive".into(),
        ));
    }
    if cfg.law == TermLaw::Zero {
        return Err(Error::InvalidParameter("degenerate terms have no normal limit".into()));
    }
    let sample = cfg.law.sampler();
    let ks: Vec<f64> = (0..cfg.conditioning_draws)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(cfg.seed, &[label_key("clt"), c as u64]);
            let (_, sigma) = draw_conditioning(cfg.conditioning, cfg.n, &mut rng);
            let sums: Vec<f64> = (0..cfg.inner_reps)
                .map(|_| sigma.iter().map(|&s| s * sample(&mut rng)).sum())
                .collect();
            let scale = match cfg.law.variance() {
                Some(v) => (v * sigma.iter().map(|s| s * s).sum::<f64>()).sqrt(),
                None => {
                    let m = sums.iter().sum::<f64>() / sums.len() as f64;
                    (sums.iter().map(|x| (x - m).powi(2)).sum::<f64>() / sums.len() as f64).sqrt()
                }
            };
            let z: Vec<f64> = sums.iter().map(|x| x / scale).collect();
            ks_distance(&z, norm_cdf)
        })
        .collect();
    let metric = ks.iter().sum::<f64>() / ks.len() as f64;
    Ok(TheoryCheckReport {
        name: format!("conditional_clt_{}", law_label(cfg.law)),
        metric,
        threshold: cfg.threshold,
        pass: metric < cfg.threshold,
        sample_sizes: vec![cfg.n],
        details: ks
            .iter()
            .enumerate()
            .map(|(c, &v)| Detail::new(&format!("ks_draw_{c}"), cfg.n, v))
            .collect(),
    })
}

/// Conditional WLLN check.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct WllnConfig {
    pub n_list: Vec<usize>,
    pub conditioning_draws: usize,
    pub inner_reps: usize,
    pub law: TermLaw,
    pub conditioning: Conditioning,
    /// Tolerance at `n` is `epsilon_scale * n^(-1/4)`.
    pub epsilon_scale: f64,
    pub seed: u64,
}

impl Default for WllnConfig {
    fn default() -> Self {
        WllnConfig {
            n_list: vec![500, 2000, 8000],
            conditioning_draws: 20,
            inner_reps: 50,
            law: TermLaw::Uniform,
            conditioning: Conditioning::RandomScales,
            epsilon_scale: 2.0,
            seed: 1,
        }
    }
}

impl WllnConfig {
    /// Terms with a finite moment of order 1.5 only.
    pub fn moment_one_and_a_half() -> WllnConfig {
        WllnConfig {
            law: TermLaw::StudentT(1.6),
            ..WllnConfig::default()
        }
    }

    /// Terms equal to their conditional means.
    pub fn deterministic() -> WllnConfig {
        WllnConfig {
            law: TermLaw::Zero,
            ..WllnConfig::default()
        }
    }

    /// Cauchy terms: no moment of order above one, the check must fail.
    pub fn heavy_tailed() -> WllnConfig {
        WllnConfig {
            law: TermLaw::Cauchy,
            ..WllnConfig::default()
        }
    }
}

/// Median over draws of `|mean(W) - mean(E[W | F])|` at each `n`. Passes when
/// every median is below `epsilon_scale * n^(-1/4)` and the medians decrease
/// (or are all exactly zero).
pub fn check_conditional_wlln(cfg: &WllnConfig) -> Result<TheoryCheckReport> {
    cfg.law.validate()?;
    if cfg.n_list.is_empty() || cfg.conditioning_draws == 0 || cfg.inner_reps == 0 {
        return Err(Error::InvalidParameter(
            "n_list, conditioning_draws and inner_reps must be non-empty".into(),
        ));
    }
    let sample = cfg.law.sampler();
    let mut medians = Vec::new();
    let mut details = Vec::new();
    let mut within = true;
    for &n in &cfg.n_list {
        let devs: Vec<f64> = (0..cfg.conditioning_draws)
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut rng = substream(cfg.seed, &[label_key("wlln"), n as u64, c as u64]);
                let (mu, sigma) = draw_conditioning(cfg.conditioning, n, &mut rng);
                let center = mu.iter().sum::<f64>() / n as f64;
                (0..cfg.inner_reps)
                    .map(|_| {
                        let total: f64 = mu.iter().zip(&sigma).map(|(&m, &s)| m + s * sample(&mut rng)).sum();
                        (total / n as f64 - center).abs()
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let med = median(&devs);
        let eps = cfg.epsilon_scale * (n as f64).powf(-0.25);
        within &= med < eps;
        details.push(Detail::new("median_abs_deviation", n, med));
        details.push(Detail::new("epsilon", n, eps));
        medians.push(med);
    }
    let trend = decreasing(&medians) || medians.iter().all(|&m| m == 0.0);
    Ok(TheoryCheckReport {
        name: format!("conditional_wlln_{}", law_label(cfg.law)),
        metric: *medians.last().unwrap(),
        threshold: cfg.epsilon_scale * (*cfg.n_list.last().unwrap() as f64).powf(-0.25),
        pass: within && trend,
        sample_sizes: cfg.n_list.clone(),
        details,
    })
}

/// Conditional law of the `n`-th element of a sequence converging to
/// `N(0, 1)`, or (for the negative control) not converging.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileSequence {
    /// `N(0, 1)` at every `n`.
    ExactNormal,
    /// Student t with `n * U(0.5, 1.5)` degrees of freedom, `U` drawn per
    /// conditioning draw.
    GrowingDf,
    /// Student t with 3 degrees of freedom at every `n`.
    FixedHeavyTails,
}

/// Conditional quantile convergence check.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantileConfig {
    pub n_list: Vec<usize>,
    pub conditioning_draws: usize,
    /// Draws per conditioning draw are `m_per_n * n`, so the Monte Carlo
    /// error of the quantile also vanishes along the sequence.
    pub m_per_n: usize,
    pub alpha: f64,
    pub sequence: QuantileSequence,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for QuantileConfig {
    fn default() -> Self {
        QuantileConfig {
            n_list: vec![10, 100, 1000],
            conditioning_draws: 20,
            m_per_n: 50,
            alpha: 0.95,
            sequence: QuantileSequence::GrowingDf,
            threshold: 0.05,
            seed: 1,
        }
    }
}

impl QuantileConfig {
    pub fn exact_normal() -> QuantileConfig {
        QuantileConfig {
            sequence: QuantileSequence::ExactNormal,
            ..QuantileConfig::default()
        }
    }

    pub fn median() -> QuantileConfig {
        QuantileConfig {
            alpha: 0.5,
            ..QuantileConfig::default()
        }
    }

    /// A sequence whose conditional law does not approach `N(0, 1)`.
    pub fn non_convergent() -> QuantileConfig {
        QuantileConfig {
            sequence: QuantileSequence::FixedHeavyTails,
            ..QuantileConfig::default()
        }
    }
}

/// Median over conditioning draws of `|q_n - q|`, where `q_n` is the empirical
/// `alpha`-quantile of the conditional law and `q` the `N(0, 1)` quantile.
/// Passes when the medians decrease and the last is below `threshold`.
pub fn check_quantile_convergence(cfg: &QuantileConfig) -> Result<TheoryCheckReport> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {}",
            cfg.alpha
        )));
    }
    if cfg.n_list.is_empty() || cfg.conditioning_draws == 0 || cfg.m_per_n == 0 {
        return Err(Error::InvalidParameter(
            "n_list, conditioning_draws and m_per_n must be non-empty".into(),
        ));
    }
    let target = norm_quantile(cfg.alpha);
    let mut medians = Vec::new();
    let mut details = Vec::new();
    for &n in &cfg.n_list {
        let m = cfg.m_per_n * n;
        let errs: Vec<f64> = (0..cfg.conditioning_draws)
            .into_par_iter()
            .map(|c| {
                let mut rng = substream(cfg.seed, &[label_key("quantile"), n as u64, c as u64]);
                let draws: Vec<f64> = match cfg.sequence {
                    QuantileSequence::ExactNormal => (0..m).map(|_| StandardNormal.sample(&mut rng)).collect(),
                    QuantileSequence::GrowingDf | QuantileSequence::FixedHeavyTails => {
                        let df = if cfg.sequence == QuantileSequence::GrowingDf {
                            n as f64 * rng.random_range(0.5..1.5)
                        } else {
                            3.0
                        };
                        let t = StudentT::new(df).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                        (0..m).map(|_| t.sample(&mut rng)).collect()
                    }
                };
                Ok((empirical_quantile(&draws, cfg.alpha) - target).abs())
            })
            .collect::<Result<_>>()?;
        let med = median(&errs);
        details.push(Detail::new("median_abs_quantile_error", n, med));
        medians.push(med);
    }
    let last = *medians.last().unwrap();
    let label = match cfg.sequence {
        QuantileSequence::ExactNormal => "exact_normal",
        QuantileSequence::GrowingDf => "growing_df",
        QuantileSequence::FixedHeavyTails => "fixed_heavy_tails",
    };
    Ok(TheoryCheckReport {
        name: format!("quantile_convergence_{label}_alpha={}", cfg.alpha),
        metric: last,
        threshold: cfg.threshold,
        pass: last < cfg.threshold && decreasing(&medians),
        sample_sizes: cfg.n_list.clone(),
        details,
    })
}

fn law_label(law: TermLaw) -> String {
    match law {
        TermLaw::Uniform => "uniform".into(),
        TermLaw::Gaussian => "gaussian".into(),
        TermLaw::StudentT(df) => format!("student_t_df={df}"),
        TermLaw::Cauchy => "cauchy".into(),
        TermLaw::Zero => "deterministic".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_law_has_exactly_zero_deviation() {
        let r = check_conditional_wlln(&WllnConfig {
            conditioning_draws: 2,
            inner_reps: 3,
            ..WllnConfig::deterministic()
        })
        .unwrap();
        assert!(r.pass);
        assert_eq!(r.metric, 0.0);
    }

    #[test]
    fn clt_rejects_degenerate_terms() {
        let cfg = CltConfig {
            law: TermLaw::Zero,
            ..CltConfig::default()
        };
        assert!(matches!(check_conditional_clt(&cfg), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn quantile_rejects_bad_alpha() {
        let cfg = QuantileConfig {
            alpha: 1.0,
            ..QuantileConfig::default()
        };
        assert!(check_quantile_convergence(&cfg).is_err());
    }
}
