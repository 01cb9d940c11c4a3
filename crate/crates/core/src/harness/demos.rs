//! Smaller studies: shrinkage-induced Type-I error, marginal association in
//! published simulation designs, and lasso versus post-lasso estimation error.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::{gcm_from_residuals, mx2_f_test, CondLawX, Sampler, Sidedness};
use crate::learners::{fit_lasso_cv, fit_post_lasso_from, FittedValues, LassoConfig, MeanModel, VarianceEstimator};
use crate::model::{generate_dataset, linear_predictor, sample_ar1_gaussian, Dataset, Family, GroundTruth};
use crate::rng::{label_key, substream};
use crate::stats::{binomial_se, logistic, norm_cdf, norm_quantile};

/// Large-sample Type-I error of the shrunk-`X`-fit, zero-`Y`-fit test.
pub fn negative_result_limit(c: f64, beta_norm_sq: f64, alpha: f64) -> f64 {
    1.0 - norm_cdf(norm_quantile(1.0 - alpha) - c * beta_norm_sq / (beta_norm_sq + 1.0).sqrt())
}

/// One row of the shrinkage demonstration.
#[derive(Clone, Debug, Serialize)]
pub struct NegativeResultRow {
    pub c: f64,
    pub n: usize,
    pub reps: usize,
    pub rejection_rate: f64,
    pub mcse: f64,
    pub limit: f64,
}

/// Simulates `Z ~ N(0, I)`, `X | Z ~ N(Z'b, 1)`, `Y | Z ~ N(Z'b, 1)` with
/// `||b|| = beta_norm`, fits `X` with the shrunk coefficient `(1 - c/sqrt n) b`
/// and `Y` with zero, and reports the MX(2) F-test rejection rate for each `c`
/// next to its closed-form limit. Only `Z'b` enters, so `Z` is drawn as the
/// scalar `Z'b / ||b||`. The same data serve every `c`.
pub fn negative_result_demo(
    c_values: &[f64],
    n: usize,
    reps: usize,
    beta_norm: f64,
    alpha: f64,
    seed: u64,
) -> Result<Vec<NegativeResultRow>> {
    if n < 2 || reps == 0 {
        return Err(Error::InvalidParameter("need n >= 2 and reps >= 1".into()));
    }
    let root_n = (n as f64).sqrt();
    let rejects: Vec<Vec<bool>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, &[label_key("negative_result"), r as u64]);
            let signal: Vec<f64> = (0..n)
                .map(|_| beta_norm * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let x: Vec<f64> = signal
                .iter()
                .map(|s| s + rng.sample::<f64, _>(StandardNormal))
                .collect();
            let y: Vec<f64> = signal
                .iter()
                .map(|s| s + rng.sample::<f64, _>(StandardNormal))
                .collect();
            let z = DMatrix::from_column_slice(n, 1, &signal);
            let data = Dataset::new(x, y, z, Family::Gaussian)?;
            let my = FittedValues(vec![0.0; n]);
            c_values
                .iter()
                .map(|&c| {
                    let shrink = 1.0 - c / root_n;
                    let mx = FittedValues(signal.iter().map(|s| shrink * s).collect());
                    let law = CondLawX::new(&mx, VarianceEstimator::constant(1.0), Sampler::Gaussian);
                    Ok(mx2_f_test(&data, &law, &my, alpha, Sidedness::Greater)?.reject)
                })
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<_>>()?;
    Ok(c_values
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let rate = rejects.iter().filter(|r| r[k]).count() as f64 / reps as f64;
            NegativeResultRow {
                c,
                n,
                reps,
                rejection_rate: rate,
                mcse: binomial_se(rate, reps),
                limit: negative_result_limit(c, beta_norm * beta_norm, alpha),
            }
        })
        .collect())
}

/// How the response relates to the covariates in a marginal-association audit.
#[derive(Clone, Debug, Serialize)]
pub enum DesignKind {
    /// `Y` depends on `W` through `coef`; every column of `W` takes a turn as `X`.
    VariableSelection { coef: Vec<f64> },
    /// A separate `X = Z coef_x + e` and `Y = Z coef_y + xi`.
    Confounded { coef_x: Vec<f64>, coef_y: Vec<f64> },
}

/// A simulation design from the model-X literature.
#[derive(Clone, Debug, Serialize)]
pub struct MarginalDesign {
    pub name: String,
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub family: Family,
    /// Center the design and scale every column to unit norm before drawing `Y`.
    pub normalize_columns: bool,
    pub kind: DesignKind,
}

fn random_signs<R: Rng + ?Sized>(k: usize, magnitude: f64, rng: &mut R) -> Vec<f64> {
    (0..k)
        .map(|_| if rng.random::<bool>() { magnitude } else { -magnitude })
        .collect()
}

impl MarginalDesign {
    /// Logistic response, `n = 800`, `p = 1500`, AR(1) with 0.3, 50 random
    /// signals of magnitude 20 on the unit-norm scale.
    pub fn candes2016(seed: u64) -> Self {
        let mut rng = substream(seed, &[label_key("candes2016")]);
        let p = 1500;
        let mut pos: Vec<usize> = (0..p).collect();
        pos.shuffle(&mut rng);
        let signs = random_signs(50, 20.0, &mut rng);
        let mut coef = vec![0.0; p];
        for (&j, &b) in pos[..50].iter().zip(&signs) {
            coef[j] = b;
        }
        MarginalDesign {
            name: "candes2016".into(),
            n: 800,
            p,
            rho: 0.3,
            family: Family::Binomial,
            normalize_columns: true,
            kind: DesignKind::VariableSelection { coef },
        }
    }

    /// Linear response, `n = p = 800`, AR(1) with 0.5, 50 signals of magnitude
    /// 0.175 with random signs, equally spaced or in the first 50 positions.
    pub fn liu2022(spaced: bool, seed: u64) -> Self {
        let mut rng = substream(seed, &[label_key("liu2022"), spaced as u64]);
        let p = 800;
        let signs = random_signs(50, 0.175, &mut rng);
        let mut coef = vec![0.0; p];
        for (k, &b) in signs.iter().enumerate() {
            let j = if spaced { k * (p / 50) } else { k };
            coef[j] = b;
        }
        MarginalDesign {
            name: if spaced {
                "liu2022_spaced".into()
            } else {
                "liu2022_first".into()
            },
            n: 800,
            p,
            rho: 0.5,
            family: Family::Gaussian,
            normalize_columns: false,
            kind: DesignKind::VariableSelection { coef },
        }
    }

    /// `n = 250`, `p = 500`, AR(1) with 0.5; `X` and `Y` share the same five
    /// leading coefficients of magnitude 0.3 with random signs.
    pub fn li2022(seed: u64) -> Self {
        let mut rng = substream(seed, &[label_key("li2022")]);
        let p = 500;
        let signs = random_signs(5, 0.3, &mut rng);
        let mut coef = vec![0.0; p];
        coef[..5].copy_from_slice(&signs);
        MarginalDesign {
            name: "li2022".into(),
            n: 250,
            p,
            rho: 0.5,
            family: Family::Gaussian,
            normalize_columns: false,
            kind: DesignKind::Confounded {
                coef_x: coef.clone(),
                coef_y: coef,
            },
        }
    }

    /// Indices carrying nonzero coefficients.
    pub fn signal_positions(&self) -> Vec<usize> {
        let nz = |c: &[f64]| {
            c.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, _)| j)
                .collect::<Vec<_>>()
        };
        match &self.kind {
            DesignKind::VariableSelection { coef } => nz(coef),
            DesignKind::Confounded { coef_x, coef_y } => {
                let mut v = nz(coef_x);
                v.extend(nz(coef_y));
                v.sort_unstable();
                v.dedup();
                v
            }
        }
    }
}

fn draw_response<R: Rng + ?Sized>(eta: &[f64], family: Family, rng: &mut R) -> Vec<f64> {
    eta.iter()
        .map(|&e| match family {
            Family::Gaussian => e + rng.sample::<f64, _>(StandardNormal),
            Family::Binomial => (rng.random::<f64>() < logistic(e)) as u8 as f64,
        })
        .collect()
}

fn normalize_columns(w: &mut DMatrix<f64>) {
    for mut col in w.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
}

fn centered(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|a| a - m).collect()
}

fn rejects(rx: &[f64], ry: &[f64]) -> bool {
    gcm_from_residuals(rx, ry, 0.05, Sidedness::TwoSided)
        .map(|r| r.reject)
        .unwrap_or(false)
}

/// Null rejection rate of the two-sided marginal GCM at level 0.05: one entry
/// per column of `W` for variable-selection designs (testing `W_j` given the
/// rest, so only the nulls are meaningful) and a single entry for confounded
/// designs.
pub fn marginal_association_profile(design: &MarginalDesign, reps: usize, seed: u64) -> Result<Vec<f64>> {
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be positive".into()));
    }
    let width = match &design.kind {
        DesignKind::VariableSelection { coef } => {
            if coef.len() != design.p {
                return Err(Error::InvalidConfig("coefficient length differs from p".into()));
            }
            design.p
        }
        DesignKind::Confounded { coef_x, coef_y } => {
            if coef_x.len() != design.p || coef_y.len() != design.p {
                return Err(Error::InvalidConfig("coefficient length differs from p".into()));
            }
            // Columns past the last signal never matter; the AR(1) marginal of
            // the leading columns is again AR(1).
            design.signal_positions().last().map_or(1, |j| j + 1)
        }
    };
    let key = label_key(&design.name);
    let counts: Vec<Vec<bool>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, &[label_key("marginal_profile"), key, r as u64]);
            let mut w = sample_ar1_gaussian(design.n, width, design.rho, &mut rng)?;
            if design.normalize_columns {
                normalize_columns(&mut w);
            }
            Ok(match &design.kind {
                DesignKind::VariableSelection { coef } => {
                    let y = draw_response(&linear_predictor(&w, coef, 0.0), design.family, &mut rng);
                    let ry = centered(&y);
                    (0..width)
                        .map(|j| rejects(&centered(w.column(j).as_slice()), &ry))
                        .collect()
                }
                DesignKind::Confounded { coef_x, coef_y } => {
                    let x = draw_response(&linear_predictor(&w, &coef_x[..width], 0.0), Family::Gaussian, &mut rng);
                    let y = draw_response(&linear_predictor(&w, &coef_y[..width], 0.0), design.family, &mut rng);
                    vec![rejects(&centered(&x), &centered(&y))]
                }
            })
        })
        .collect::<Result<_>>()?;
    let k = counts[0].len();
    Ok((0..k)
        .map(|j| counts.iter().filter(|c| c[j]).count() as f64 / reps as f64)
        .collect())
}

/// Mean squared errors of one learner on one target.
#[derive(Clone, Debug, Serialize)]
pub struct MseRow {
    pub learner: String,
    pub target: String,
    pub shared_mse: f64,
    pub shared_se: f64,
    pub total_mse: f64,
    pub total_se: f64,
}

/// Lasso versus post-lasso estimation error, with paired differences.
#[derive(Clone, Debug, Serialize)]
pub struct MseComparison {
    pub rows: Vec<MseRow>,
    /// Mean over replicates of `post-lasso shared MSE - lasso shared MSE`, per target `[x, y]`.
    pub shared_difference: [f64; 2],
    pub shared_difference_se: [f64; 2],
    /// Mean over replicates of `lasso total MSE - post-lasso total MSE`, per target `[x, y]`.
    pub total_difference: [f64; 2],
    pub total_difference_se: [f64; 2],
    pub reps: usize,
}

/// `d' Sigma(rho) d` over the entries of `d` flagged in `keep`.
fn ar1_quadratic_form(d: &[f64], rho: f64, keep: impl Fn(usize) -> bool) -> f64 {
    let idx: Vec<usize> = (0..d.len()).filter(|&j| d[j] != 0.0 && keep(j)).collect();
    let mut s = 0.0;
    for &a in &idx {
        for &b in &idx {
            s += d[a] * d[b] * rho.powi((a as i64 - b as i64).unsigned_abs() as i32);
        }
    }
    s
}

/// Population MSE of a fitted linear predictor restricted to the first `s`
/// (shared) coordinates, and over all coordinates including the intercept.
pub fn linear_predictor_mse(
    model: &MeanModel,
    truth_coef: &[f64],
    truth_intercept: f64,
    s: usize,
    rho: f64,
) -> (f64, f64) {
    let d: Vec<f64> = model
        .coefficients()
        .iter()
        .zip(truth_coef)
        .map(|(a, b)| a - b)
        .collect();
    let shared = ar1_quadratic_form(&d, rho, |j| j < s);
    let di = model.intercept() - truth_intercept;
    let total = di * di + ar1_quadratic_form(&d, rho, |_| true);
    (shared, total)
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Lasso and post-lasso fits of `E[X|Z]` and `E[Y|Z]` in the Gaussian model.
/// Shared-coordinate error is measured on null data; total error on data drawn
/// with signal `theta`, whose `E[Y|Z]` has coefficients `gamma + theta beta`.
#[allow(clippy::too_many_arguments)]
pub fn mse_shared_vs_total(
    n: usize,
    p: usize,
    s: usize,
    rho: f64,
    nu: f64,
    theta: f64,
    reps: usize,
    seed: u64,
) -> Result<MseComparison> {
    if reps < 2 {
        return Err(Error::InvalidParameter("need at least two replicates".into()));
    }
    let null = GroundTruth::sparse(p, s, nu, 0.0, rho, Family::Gaussian)?;
    let alt = null.clone().with_theta(theta);
    let cfg = LassoConfig::default();
    let y_alt_coef: Vec<f64> = alt.coef_y.iter().zip(&alt.coef_x).map(|(g, b)| g + theta * b).collect();
    // Per replicate: [lasso x, post x, lasso y, post y] x [shared, total].
    let per_rep: Vec<[[f64; 2]; 4]> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, &[label_key("mse_compare"), r as u64]);
            let d0 = generate_dataset(&null, n, &mut rng)?;
            let d1 = generate_dataset(&alt, n, &mut rng)?;
            let cvx = fit_lasso_cv(d0.z(), d0.x(), Family::Gaussian, 5, &cfg, &mut rng)?;
            let px = fit_post_lasso_from(&cvx, d0.z(), d0.x())?;
            let cvy0 = fit_lasso_cv(d0.z(), d0.y(), Family::Gaussian, 5, &cfg, &mut rng)?;
            let py0 = fit_post_lasso_from(&cvy0, d0.z(), d0.y())?;
            let cvy1 = fit_lasso_cv(d1.z(), d1.y(), Family::Gaussian, 5, &cfg, &mut rng)?;
            let py1 = fit_post_lasso_from(&cvy1, d1.z(), d1.y())?;
            let e = |m: &MeanModel, coef: &[f64]| linear_predictor_mse(m, coef, 0.0, s, rho);
            Ok([
                [e(&cvx.model, &null.coef_x).0, e(&cvx.model, &null.coef_x).1],
                [e(&px, &null.coef_x).0, e(&px, &null.coef_x).1],
                [e(&cvy0.model, &null.coef_y).0, e(&cvy1.model, &y_alt_coef).1],
                [e(&py0, &null.coef_y).0, e(&py1, &y_alt_coef).1],
            ])
        })
        .collect::<Result<_>>()?;
    let col = |k: usize, t: usize| per_rep.iter().map(|r| r[k][t]).collect::<Vec<f64>>();
    let mut rows = Vec::new();
    for (k, (learner, target)) in [("lasso", "x"), ("post_lasso", "x"), ("lasso", "y"), ("post_lasso", "y")]
        .iter()
        .enumerate()
    {
        let (sm, sse) = mean_se(&col(k, 0));
        let (tm, tse) = mean_se(&col(k, 1));
        rows.push(MseRow {
            learner: learner.to_string(),
            target: target.to_string(),
            shared_mse: sm,
            shared_se: sse,
            total_mse: tm,
            total_se: tse,
        });
    }
    let paired = |a: usize, b: usize, t: usize| {
        let d: Vec<f64> = per_rep.iter().map(|r| r[a][t] - r[b][t]).collect();
        mean_se(&d)
    };
    let (sx, sxe) = paired(1, 0, 0);
    let (sy, sye) = paired(3, 2, 0);
    let (tx, txe) = paired(0, 1, 1);
    let (ty, tye) = paired(2, 3, 1);
    Ok(MseComparison {
        rows,
        shared_difference: [sx, sy],
        shared_difference_se: [sxe, sye],
        total_difference: [tx, ty],
        total_difference_se: [txe, tye],
        reps,
    })
}
