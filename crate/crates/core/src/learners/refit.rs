//! Unpenalized refits on a chosen column subset, and the post-lasso built on them.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::lasso::{fit_lasso_cv, LassoConfig, LassoCv};
use super::{fit_intercept_only, MeanModel};
use crate::error::{Error, Result};
use crate::model::Family;
use crate::stats::logistic;

/// Relative residual norm below which a column counts as collinear with the
/// columns kept before it.
const COLLINEAR_TOL: f64 = 1e-10;

/// Centered copies of the requested columns, keeping a column only if it is
/// not (numerically) in the span of the intercept and the columns already kept.
fn independent_columns(z: &DMatrix<f64>, columns: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let n = z.nrows();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut sorted = columns.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for j in sorted {
        let col = z.column(j);
        let m = col.mean();
        let mut v: Vec<f64> = col.iter().map(|x| x - m).collect();
        let orig: f64 = v.iter().map(|x| x * x).sum();
        for q in &basis {
            let proj: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(x, qi)| *x -= proj * qi);
        }
        let rem: f64 = v.iter().map(|x| x * x).sum();
        if orig > 0.0 && rem > COLLINEAR_TOL * orig && kept.len() + 1 < n {
            let norm = rem.sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
            kept.push(j);
        } else {
            dropped.push(j);
        }
    }
    (kept, dropped)
}

fn ols(z: &DMatrix<f64>, target: &[f64], cols: &[usize]) -> Result<(f64, Vec<f64>)> {
    let n = z.nrows();
    let ybar = target.iter().sum::<f64>() / n as f64;
    if cols.is_empty() {
        return Ok((ybar, Vec::new()));
    }
    let means: Vec<f64> = cols.iter().map(|&j| z.column(j).mean()).collect();
    let xc = DMatrix::from_fn(n, cols.len(), |i, k| z[(i, cols[k])] - means[k]);
    let yc = DVector::from_iterator(n, target.iter().map(|v| v - ybar));
    let qr = xc.qr();
    let qty = qr.q().transpose() * yc;
    let b = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::InvalidInput("singular refit design".into()))?;
    let b0 = ybar - b.iter().zip(&means).map(|(c, m)| c * m).sum::<f64>();
    Ok((b0, b.iter().copied().collect()))
}

fn deviance(y: &[f64], eta: &[f64]) -> f64 {
    // -2 loglik computed from the linear predictor for numerical stability.
    2.0 * y
        .iter()
        .zip(eta)
        .map(|(&yi, &e)| {
            let softplus = if e > 0.0 {
                e + (-e).exp().ln_1p()
            } else {
                e.exp().ln_1p()
            };
            softplus - yi * e
        })
        .sum::<f64>()
}

fn logistic_mle(z: &DMatrix<f64>, target: &[f64], cols: &[usize]) -> Result<(f64, Vec<f64>)> {
    const MAX_ITER: usize = 100;
    const TOL: f64 = 1e-8;
    let n = z.nrows();
    let k = cols.len() + 1;
    let design = DMatrix::from_fn(n, k, |i, c| if c == 0 { 1.0 } else { z[(i, cols[c - 1])] });
    let pbar = (target.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let mut beta = DVector::zeros(k);
    beta[0] = (pbar / (1.0 - pbar)).ln();
    let y = DVector::from_column_slice(target);
    let mut eta = &design * &beta;
    let mut dev = deviance(target, eta.as_slice());
    for _ in 0..MAX_ITER {
        let prob = eta.map(logistic);
        let w = prob.map(|p| (p * (1.0 - p)).max(1e-10));
        let score = design.transpose() * (&y - &prob);
        let mut info = DMatrix::zeros(k, k);
        for i in 0..n {
            let row = design.row(i);
            info.ger(w[i], &row.transpose(), &row.transpose(), 1.0);
        }
        let step = info
            .cholesky()
            .ok_or_else(|| Error::ConvergenceFailure {
                iterations: 0,
                message: "logistic refit information matrix is singular".into(),
            })?
            .solve(&score);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &beta + &step * t;
            let cand_eta = &design * &cand;
            let cand_dev = deviance(target, cand_eta.as_slice());
            if cand_dev.is_finite() && cand_dev <= dev + 1e-12 * dev.abs() {
                let change = dev - cand_dev;
                beta = cand;
                eta = cand_eta;
                dev = cand_dev;
                accepted = true;
                if change.abs() <= TOL * (dev.abs() + 0.1) {
                    return Ok((beta[0], beta.iter().skip(1).copied().collect()));
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No descent direction left: at the optimum up to rounding.
            return Ok((beta[0], beta.iter().skip(1).copied().collect()));
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: MAX_ITER,
        message: format!("logistic refit did not converge, deviance {dev:.6e}"),
    })
}

/// Unpenalized OLS (gaussian) or logistic MLE (binomial) on `columns` plus an
/// intercept. Collinear columns are dropped, keeping the smallest index; the
/// dropped indices are recorded on the model.
pub fn fit_refit_on(z: &DMatrix<f64>, target: &[f64], family: Family, columns: &[usize]) -> Result<MeanModel> {
    if columns.is_empty() {
        return fit_intercept_only(target, family, z.ncols());
    }
    if z.nrows() != target.len() {
        return Err(Error::InvalidInput("refit: row count mismatch".into()));
    }
    let (kept, dropped) = independent_columns(z, columns);
    if kept.is_empty() {
        return Ok(fit_intercept_only(target, family, z.ncols())?.with_dropped(dropped));
    }
    let (b0, b) = match family {
        Family::Gaussian => ols(z, target, &kept)?,
        Family::Binomial => logistic_mle(z, target, &kept)?,
    };
    let mut coef = vec![0.0; z.ncols()];
    for (&j, &v) in kept.iter().zip(&b) {
        coef[j] = v;
    }
    Ok(MeanModel::from_parts(b0, coef, family).with_dropped(dropped))
}

/// A post-lasso fit together with the lasso it was built from.
#[derive(Clone, Debug)]
pub struct PostLasso {
    pub lasso: LassoCv,
    pub model: MeanModel,
}

/// Post-lasso refit reusing an existing cross-validated lasso fit.
pub fn fit_post_lasso_from(lasso: &LassoCv, z: &DMatrix<f64>, target: &[f64]) -> Result<MeanModel> {
    let family = lasso.model.family();
    fit_refit_on(z, target, family, lasso.model.active_set())
}

/// Cross-validated lasso for selection followed by an unpenalized refit.
pub fn fit_post_lasso<R: Rng + ?Sized>(
    z: &DMatrix<f64>,
    target: &[f64],
    family: Family,
    folds: usize,
    cfg: &LassoConfig,
    rng: &mut R,
) -> Result<PostLasso> {
    let lasso = fit_lasso_cv(z, target, family, folds, cfg, rng)?;
    let model = fit_post_lasso_from(&lasso, z, target)?;
    Ok(PostLasso { lasso, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::ConditionalMean;
    use crate::model::{generate_dataset, GroundTruth};
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;

    #[test]
    fn refit_matches_normal_equations() {
        let truth = GroundTruth::sparse(10, 3, 0.6, 0.0, 0.4, Family::Gaussian).unwrap();
        let d = generate_dataset(&truth, 150, &mut seeded(5)).unwrap();
        let cols = [0, 1, 2];
        let m = fit_refit_on(d.z(), d.x(), Family::Gaussian, &cols).unwrap();
        let design = DMatrix::from_fn(150, 4, |i, c| if c == 0 { 1.0 } else { d.z()[(i, cols[c - 1])] });
        let xv = DVector::from_column_slice(d.x());
        let b = (design.transpose() * &design)
            .cholesky()
            .unwrap()
            .solve(&(design.transpose() * xv));
        assert_abs_diff_eq!(m.intercept(), b[0], epsilon = 1e-10);
        for k in 0..3 {
            assert_abs_diff_eq!(m.coefficients()[cols[k]], b[k + 1], epsilon = 1e-10);
        }
    }

    #[test]
    fn collinear_column_is_dropped() {
        let truth = GroundTruth::sparse(4, 2, 0.6, 0.0, 0.4, Family::Gaussian).unwrap();
        let d = generate_dataset(&truth, 50, &mut seeded(6)).unwrap();
        let mut z = d.z().clone();
        let c0 = z.column(0).clone_owned();
        z.set_column(3, &(c0 * 2.0).add_scalar(1.0));
        let m = fit_refit_on(&z, d.x(), Family::Gaussian, &[3, 0, 1]).unwrap();
        assert_eq!(m.dropped_columns(), &[3]);
        assert_eq!(m.coefficients()[3], 0.0);
        assert!(m.coefficients()[0] != 0.0);
    }

    #[test]
    fn empty_selection_is_intercept_only_bitwise() {
        let truth = GroundTruth::sparse(4, 2, 0.6, 0.0, 0.4, Family::Binomial).unwrap();
        let d = generate_dataset(&truth, 50, &mut seeded(7)).unwrap();
        for (t, fam) in [(d.x(), Family::Gaussian), (d.y(), Family::Binomial)] {
            let a = fit_refit_on(d.z(), t, fam, &[]).unwrap();
            let b = fit_intercept_only(t, fam, 4).unwrap();
            assert_eq!(a.predict(d.z()), b.predict(d.z()));
        }
    }

    #[test]
    fn refit_is_affine_equivariant() {
        let truth = GroundTruth::sparse(8, 3, 0.6, 0.0, 0.4, Family::Gaussian).unwrap();
        let d = generate_dataset(&truth, 80, &mut seeded(8)).unwrap();
        let t2: Vec<f64> = d.x().iter().map(|v| -2.5 * v + 4.0).collect();
        let a = fit_refit_on(d.z(), d.x(), Family::Gaussian, &[0, 2, 5])
            .unwrap()
            .predict(d.z());
        let b = fit_refit_on(d.z(), &t2, Family::Gaussian, &[0, 2, 5])
            .unwrap()
            .predict(d.z());
        for (u, v) in a.iter().zip(&b) {
            assert_abs_diff_eq!(*v, -2.5 * u + 4.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn logistic_refit_score_is_zero() {
        let truth = GroundTruth::sparse(6, 2, 0.8, 0.0, 0.2, Family::Binomial).unwrap();
        let d = generate_dataset(&truth, 400, &mut seeded(9)).unwrap();
        let m = fit_refit_on(d.z(), d.y(), Family::Binomial, &[0, 1]).unwrap();
        let prob = m.predict(d.z());
        let r: Vec<f64> = d.y().iter().zip(&prob).map(|(y, p)| y - p).collect();
        assert!(r.iter().sum::<f64>().abs() < 1e-5);
        for j in [0, 1] {
            let s: f64 = r.iter().enumerate().map(|(i, v)| v * d.z()[(i, j)]).sum();
            assert!(s.abs() < 1e-5, "score {s}");
        }
    }

    #[test]
    fn post_lasso_refits_on_the_lasso_support() {
        let truth = GroundTruth::sparse(40, 3, 1.0, 0.0, 0.0, Family::Gaussian).unwrap();
        let d = generate_dataset(&truth, 300, &mut seeded(10)).unwrap();
        let pl = fit_post_lasso(
            d.z(),
            d.x(),
            Family::Gaussian,
            5,
            &LassoConfig::default(),
            &mut seeded(11),
        )
        .unwrap();
        let direct = fit_refit_on(d.z(), d.x(), Family::Gaussian, pl.lasso.model.active_set()).unwrap();
        assert_eq!(pl.model, direct);
    }
}
