//! Observed data and the ground-truth data-generating processes used by the
//! simulation study.
//!
//! The simulation model is
//!
//! ```text
//! Z ~ N(0, Sigma(rho)),   Sigma(rho)_{jk} = rho^|j-k|
//! X | Z ~ N(a_x + Z beta, 1)                   (or Bernoulli(logistic(a_x + Z beta)))
//! Y | X, Z ~ N(theta X + a_y + Z gamma, 1)     (or Bernoulli(logistic(...)))
//! ```
//!
//! where `beta` (`coef_x`) and `gamma` (`coef_y`) carry `nu` in their first `s`
//! entries and zeros elsewhere.

use std::io::{Read, Write};
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::logistic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Binomial => "binomial",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Family::Gaussian),
            "binomial" | "binary" => Ok(Family::Binomial),
            other => Err(Error::InvalidParameter(format!("unknown family {other:?}"))),
        }
    }
}

/// An observed sample `(x, y, Z)` of size `n`.
#[derive(Clone, Debug)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
    z: DMatrix<f64>,
    family: Family,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, z: DMatrix<f64>, family: Family) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(Error::InvalidInput("dataset must have at least one row".into()));
        }
        if y.len() != n || z.nrows() != n {
            return Err(Error::InvalidInput(format!(
                "row counts differ: x={}, y={}, z={}",
                n,
                y.len(),
                z.nrows()
            )));
        }
        if family == Family::Binomial {
            if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidInput(format!(
                    "binomial response must be 0/1, row {} has {}",
                    i + 1,
                    y[i]
                )));
            }
        }
        Ok(Dataset { x, y, z, family })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Rows `idx` of this dataset, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: idx.iter().map(|&i| self.x[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            z: self.z.select_rows(idx),
            family: self.family,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.x.iter().chain(&self.y).chain(self.z.iter()).all(|v| v.is_finite())
    }

    /// Writes the dataset as CSV with header `x,y,z1..zp`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["x".to_string(), "y".to_string()];
        header.extend((1..=self.p()).map(|j| format!("z{j}")));
        wtr.write_record(&header)?;
        let mut rec = Vec::with_capacity(self.p() + 2);
        for i in 0..self.n() {
            rec.clear();
            rec.push(self.x[i].to_string());
            rec.push(self.y[i].to_string());
            rec.extend((0..self.p()).map(|j| self.z[(i, j)].to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a CSV with header `x,y,z1..zp`. Every field must parse to a finite
    /// number; the error names the first offending data row (1-based).
    pub fn read_csv<R: Read>(r: R, family: Family) -> Result<Dataset> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let cols: Vec<&str> = header.iter().map(str::trim).collect();
        if cols.len() < 2 || cols[0] != "x" || cols[1] != "y" {
            return Err(Error::InvalidInput(
                "header must start with x,y followed by z1..zp".into(),
            ));
        }
        for (j, c) in cols[2..].iter().enumerate() {
            if *c != format!("z{}", j + 1) {
                return Err(Error::InvalidInput(format!(
                    "expected column z{} in header, found {c:?}",
                    j + 1
                )));
            }
        }
        let p = cols.len() - 2;
        let (mut x, mut y, mut zrows) = (Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::InvalidInput(format!("row {}: {e}", row + 1)))?;
            if rec.len() != p + 2 {
                return Err(Error::InvalidInput(format!(
                    "row {}: expected {} fields, found {}",
                    row + 1,
                    p + 2,
                    rec.len()
                )));
            }
            let mut vals = Vec::with_capacity(p + 2);
            for field in rec.iter() {
                match field.trim().parse::<f64>() {
                    Ok(v) if v.is_finite() => vals.push(v),
                    _ => {
                        return Err(Error::InvalidInput(format!(
                            "row {}: non-finite or unparsable value {field:?}",
                            row + 1
                        )))
                    }
                }
            }
            x.push(vals[0]);
            y.push(vals[1]);
            zrows.extend_from_slice(&vals[2..]);
        }
        let n = x.len();
        let z = DMatrix::from_row_slice(n, p, &zrows);
        Dataset::new(x, y, z, family)
    }
}

/// A labeled dataset plus unlabeled `(x, Z)` observations.
#[derive(Clone, Debug)]
pub struct SemiSupervisedData {
    labeled: Dataset,
    unlabeled_x: Vec<f64>,
    unlabeled_z: DMatrix<f64>,
}

impl SemiSupervisedData {
    pub fn new(labeled: Dataset, unlabeled_x: Vec<f64>, unlabeled_z: DMatrix<f64>) -> Result<Self> {
        if unlabeled_x.len() != unlabeled_z.nrows() {
            return Err(Error::InvalidInput("unlabeled x and Z row counts differ".into()));
        }
        if unlabeled_z.ncols() != labeled.p() {
            return Err(Error::InvalidInput(
                "labeled and unlabeled Z column counts differ".into(),
            ));
        }
        Ok(SemiSupervisedData {
            labeled,
            unlabeled_x,
            unlabeled_z,
        })
    }

    pub fn labeled(&self) -> &Dataset {
        &self.labeled
    }

    pub fn unlabeled_x(&self) -> &[f64] {
        &self.unlabeled_x
    }

    pub fn unlabeled_z(&self) -> &DMatrix<f64> {
        &self.unlabeled_z
    }

    /// All `(x, Z)` observations, labeled rows first.
    pub fn pooled_xz(&self) -> (Vec<f64>, DMatrix<f64>) {
        let n_l = self.labeled.n();
        let n_u = self.unlabeled_x.len();
        let p = self.labeled.p();
        let mut x = self.labeled.x().to_vec();
        x.extend_from_slice(&self.unlabeled_x);
        let z = DMatrix::from_fn(n_l + n_u, p, |i, j| {
            if i < n_l {
                self.labeled.z()[(i, j)]
            } else {
                self.unlabeled_z[(i - n_l, j)]
            }
        });
        (x, z)
    }
}

/// Parameters of the simulation data-generating process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub coef_x: Vec<f64>,
    pub coef_y: Vec<f64>,
    pub theta: f64,
    pub rho: f64,
    pub s: usize,
    pub nu: f64,
    /// Distribution of `Y | X, Z`.
    pub family: Family,
    /// Distribution of `X | Z`; Gaussian unless stated otherwise.
    #[serde(default = "default_x_family")]
    pub x_family: Family,
    #[serde(default)]
    pub intercept_x: f64,
    #[serde(default)]
    pub intercept_y: f64,
}

fn default_x_family() -> Family {
    Family::Gaussian
}

impl GroundTruth {
    /// The standard sparse design: the first `s` entries of both coefficient
    /// vectors equal `nu`, the rest are zero.
    pub fn sparse(p: usize, s: usize, nu: f64, theta: f64, rho: f64, family: Family) -> Result<Self> {
        if s > p {
            return Err(Error::InvalidParameter(format!("sparsity s={s} exceeds p={p}")));
        }
        check_rho(rho)?;
        let coef: Vec<f64> = (0..p).map(|j| if j < s { nu } else { 0.0 }).collect();
        Ok(GroundTruth {
            coef_x: coef.clone(),
            coef_y: coef,
            theta,
            rho,
            s,
            nu,
            family,
            x_family: Family::Gaussian,
            intercept_x: 0.0,
            intercept_y: 0.0,
        })
    }

    pub fn p(&self) -> usize {
        self.coef_x.len()
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_x_family(mut self, x_family: Family) -> Self {
        self.x_family = x_family;
        self
    }

    pub fn with_intercepts(mut self, intercept_x: f64, intercept_y: f64) -> Self {
        self.intercept_x = intercept_x;
        self.intercept_y = intercept_y;
        self
    }

    /// The same model on the leading `p_keep` coordinates of Z. The AR(1)
    /// marginal of the first `p_keep` columns is again AR(1), so when all
    /// nonzero coefficients live in those columns the law of `(x, y)` and of the
    /// true conditional means is unchanged.
    pub fn truncated(&self, p_keep: usize) -> Result<Self> {
        let p_keep = p_keep.min(self.p());
        let tail_nonzero = self.coef_x[p_keep..]
            .iter()
            .chain(&self.coef_y[p_keep..])
            .any(|&c| c != 0.0);
        if tail_nonzero {
            return Err(Error::InvalidParameter(
                "cannot truncate a design with nonzero coefficients beyond p_keep".into(),
            ));
        }
        let mut t = self.clone();
        t.coef_x.truncate(p_keep);
        t.coef_y.truncate(p_keep);
        t.s = t.s.min(p_keep);
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        if self.coef_x.len() != self.coef_y.len() {
            return Err(Error::InvalidParameter("coef_x and coef_y lengths differ".into()));
        }
        check_rho(self.rho)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!("|rho| must be < 1, got {rho}")));
    }
    Ok(())
}

/// The AR(1) covariance matrix `rho^|i-j|`.
pub fn ar1_covariance(p: usize, rho: f64) -> Result<DMatrix<f64>> {
    if p == 0 {
        return Err(Error::InvalidParameter("p must be at least 1".into()));
    }
    check_rho(rho)?;
    Ok(DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32)))
}

/// `n` i.i.d. rows from `N(0, Sigma(rho))`, generated by the stationary AR(1)
/// recursion `Z_1 = e_1`, `Z_j = rho Z_{j-1} + sqrt(1 - rho^2) e_j`.
pub fn sample_ar1_gaussian<R: Rng + ?Sized>(n: usize, p: usize, rho: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidParameter("n and p must be at least 1".into()));
    }
    check_rho(rho)?;
    let innov = (1.0 - rho * rho).sqrt();
    let mut z = DMatrix::<f64>::zeros(n, p);
    let data = z.as_mut_slice();
    // Row by row so that the stream layout does not depend on storage order.
    for i in 0..n {
        let mut prev: f64 = rng.sample(StandardNormal);
        data[i] = prev;
        for j in 1..p {
            let e: f64 = rng.sample(StandardNormal);
            prev = rho * prev + innov * e;
            data[j * n + i] = prev;
        }
    }
    Ok(z)
}

/// `offset + Z coef`, skipping zero coefficients.
pub fn linear_predictor(z: &DMatrix<f64>, coef: &[f64], offset: f64) -> Vec<f64> {
    let n = z.nrows();
    let mut eta = vec![offset; n];
    let data = z.as_slice();
    for (j, &b) in coef.iter().enumerate() {
        if b != 0.0 {
            let col = &data[j * n..(j + 1) * n];
            for (e, &v) in eta.iter_mut().zip(col) {
                *e += b * v;
            }
        }
    }
    eta
}

fn draw_x<R: Rng + ?Sized>(truth: &GroundTruth, mu_x: &[f64], rng: &mut R) -> Vec<f64> {
    match truth.x_family {
        Family::Gaussian => mu_x.iter().map(|&m| m + rng.sample::<f64, _>(StandardNormal)).collect(),
        Family::Binomial => mu_x
            .iter()
            .map(|&m| if rng.random::<f64>() < m { 1.0 } else { 0.0 })
            .collect(),
    }
}

fn x_mean(truth: &GroundTruth, z: &DMatrix<f64>) -> Vec<f64> {
    let eta = linear_predictor(z, &truth.coef_x, truth.intercept_x);
    match truth.x_family {
        Family::Gaussian => eta,
        Family::Binomial => eta.into_iter().map(logistic).collect(),
    }
}

fn draw_y<R: Rng + ?Sized>(truth: &GroundTruth, signal: &[f64], eta_z: &[f64], rng: &mut R) -> Vec<f64> {
    signal
        .iter()
        .zip(eta_z)
        .map(|(&sx, &ez)| {
            let eta = truth.theta * sx + ez;
            match truth.family {
                Family::Gaussian => eta + rng.sample::<f64, _>(StandardNormal),
                Family::Binomial => {
                    if rng.random::<f64>() < logistic(eta) {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        })
        .collect()
}

/// Draws a dataset from the model (null when `theta == 0`).
pub fn generate_dataset<R: Rng + ?Sized>(truth: &GroundTruth, n: usize, rng: &mut R) -> Result<Dataset> {
    truth.validate()?;
    let z = sample_ar1_gaussian(n, truth.p().max(1), truth.rho, rng)?;
    let z = if truth.p() == 0 {
        z.columns(0, 0).into_owned()
    } else {
        z
    };
    let mu_x = x_mean(truth, &z);
    let x = draw_x(truth, &mu_x, rng);
    let eta_z = linear_predictor(&z, &truth.coef_y, truth.intercept_y);
    let y = draw_y(truth, &x, &eta_z, rng);
    Dataset::new(x, y, z, truth.family)
}

/// Draws from the point null closest to the alternative: `theta` multiplies
/// `E[X|Z]` rather than `X`, so `Y` is conditionally independent of `X`.
pub fn generate_point_null_dataset<R: Rng + ?Sized>(truth: &GroundTruth, n: usize, rng: &mut R) -> Result<Dataset> {
    truth.validate()?;
    let z = sample_ar1_gaussian(n, truth.p().max(1), truth.rho, rng)?;
    let z = if truth.p() == 0 {
        z.columns(0, 0).into_owned()
    } else {
        z
    };
    let mu_x = x_mean(truth, &z);
    let x = draw_x(truth, &mu_x, rng);
    let eta_z = linear_predictor(&z, &truth.coef_y, truth.intercept_y);
    let y = draw_y(truth, &mu_x, &eta_z, rng);
    Dataset::new(x, y, z, truth.family)
}

/// Labeled data of size `n_labeled` plus `n_unlabeled` unlabeled `(x, Z)` rows
/// from the same law.
pub fn generate_semi_supervised<R: Rng + ?Sized>(
    truth: &GroundTruth,
    n_labeled: usize,
    n_unlabeled: usize,
    point_null: bool,
    rng: &mut R,
) -> Result<SemiSupervisedData> {
    let full = if point_null {
        generate_point_null_dataset(truth, n_labeled + n_unlabeled, rng)?
    } else {
        generate_dataset(truth, n_labeled + n_unlabeled, rng)?
    };
    let lab: Vec<usize> = (0..n_labeled).collect();
    let unl: Vec<usize> = (n_labeled..n_labeled + n_unlabeled).collect();
    let labeled = full.subset(&lab);
    let unlabeled = full.subset(&unl);
    SemiSupervisedData::new(labeled, unlabeled.x, unlabeled.z)
}

/// Probabilists' Gauss-Hermite rule for `E[f(T)]`, `T ~ N(0,1)`
/// (Golub-Welsch on the Hermite Jacobi matrix).
fn gauss_hermite() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let m = 60;
        let jac = DMatrix::from_fn(m, m, |i, j| {
            if i.abs_diff(j) == 1 {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let eig = jac.symmetric_eigen();
        let nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let weights: Vec<f64> = (0..m).map(|k| eig.eigenvectors[(0, k)].powi(2)).collect();
        (nodes, weights)
    })
}

/// `E[h(T)]` for standard normal `T` by Gauss-Hermite quadrature.
pub fn normal_expectation<F: Fn(f64) -> f64>(h: F) -> f64 {
    let (nodes, weights) = gauss_hermite();
    nodes.iter().zip(weights).map(|(&t, &w)| w * h(t)).sum()
}

/// True `E[X|Z]` and `E[Y|Z]` at the rows of `z`.
///
/// For a binomial response with `theta != 0` and Gaussian `X`, `E[Y|Z]` has no
/// closed form and is evaluated by Gauss-Hermite quadrature over `X | Z`.
pub fn true_conditional_means(truth: &GroundTruth, z: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    truth.validate()?;
    if z.ncols() != truth.p() {
        return Err(Error::InvalidInput(format!(
            "Z has {} columns, model has p={}",
            z.ncols(),
            truth.p()
        )));
    }
    let mu_x = x_mean(truth, z);
    let eta_z = linear_predictor(z, &truth.coef_y, truth.intercept_y);
    let theta = truth.theta;
    let mu_y = match truth.family {
        Family::Gaussian => mu_x.iter().zip(&eta_z).map(|(&mx, &ez)| theta * mx + ez).collect(),
        Family::Binomial if theta == 0.0 => eta_z.iter().map(|&e| logistic(e)).collect(),
        Family::Binomial => match truth.x_family {
            Family::Binomial => mu_x
                .iter()
                .zip(&eta_z)
                .map(|(&pi, &ez)| pi * logistic(theta + ez) + (1.0 - pi) * logistic(ez))
                .collect(),
            Family::Gaussian => mu_x
                .iter()
                .zip(&eta_z)
                .map(|(&mx, &ez)| normal_expectation(|t| logistic(theta * (mx + t) + ez)))
                .collect(),
        },
    };
    Ok((mu_x, mu_y))
}

/// True `Var[X|Z]` given the true conditional mean of `X`.
pub fn true_var_x(truth: &GroundTruth, mu_x: &[f64]) -> Vec<f64> {
    match truth.x_family {
        Family::Gaussian => vec![1.0; mu_x.len()],
        Family::Binomial => mu_x.iter().map(|&m| m * (1.0 - m)).collect(),
    }
}

/// True `Var[Y|Z]` given the true conditional means.
pub fn true_var_y(truth: &GroundTruth, mu_x: &[f64], mu_y: &[f64]) -> Vec<f64> {
    match truth.family {
        Family::Gaussian => true_var_x(truth, mu_x)
            .into_iter()
            .map(|vx| 1.0 + truth.theta * truth.theta * vx)
            .collect(),
        Family::Binomial => mu_y.iter().map(|&m| m * (1.0 - m)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::stats::{mean, ols_slope};
    use approx::assert_abs_diff_eq;

    fn col(z: &DMatrix<f64>, j: usize) -> Vec<f64> {
        z.column(j).iter().copied().collect()
    }

    fn cov(a: &[f64], b: &[f64]) -> f64 {
        let (ma, mb) = (mean(a), mean(b));
        a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64
    }

    #[test]
    fn ar1_covariance_entries() {
        let s = ar1_covariance(3, 0.5).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 1.0]);
        assert_eq!(s, expected);
        assert_eq!(ar1_covariance(2, 0.0).unwrap(), DMatrix::identity(2, 2));
    }

    #[test]
    fn ar1_covariance_is_positive_definite() {
        let s = ar1_covariance(4, 0.8).unwrap();
        // Dense eigensolver oracle.
        let eig = s.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > 0.0));
        assert_eq!(s.transpose(), s);
    }

    #[test]
    fn ar1_rejects_unit_rho() {
        assert!(matches!(ar1_covariance(3, 1.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(ar1_covariance(3, -1.2), Err(Error::InvalidParameter(_))));
        let mut rng = seeded(0);
        assert!(sample_ar1_gaussian(10, 3, 1.0, &mut rng).is_err());
    }

    #[test]
    fn ar1_sample_independent_case() {
        let mut rng = seeded(11);
        let (n, p) = (5000, 5);
        let z = sample_ar1_gaussian(n, p, 0.0, &mut rng).unwrap();
        for a in 0..p {
            for b in 0..p {
                let c = cov(&col(&z, a), &col(&z, b));
                let target = if a == b { 1.0 } else { 0.0 };
                // se of a sample covariance of independent N(0,1): 1/sqrt(n) off
                // the diagonal and sqrt(2/n) on it.
                let se = if a == b {
                    (2.0 / n as f64).sqrt()
                } else {
                    (1.0 / n as f64).sqrt()
                };
                assert!((c - target).abs() < 3.0 * se, "({a},{b}) cov {c}");
            }
        }
    }

    #[test]
    fn ar1_sample_lag_one_covariance() {
        let mut rng = seeded(12);
        let z = sample_ar1_gaussian(5000, 4, 0.6, &mut rng).unwrap();
        let c = cov(&col(&z, 0), &col(&z, 1));
        assert!((c - 0.6).abs() < 0.05, "cov {c}");
    }

    #[test]
    fn ar1_sampler_is_deterministic() {
        let a = sample_ar1_gaussian(50, 7, 0.3, &mut seeded(5)).unwrap();
        let b = sample_ar1_gaussian(50, 7, 0.3, &mut seeded(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_independence_has_no_correlation() {
        let truth = GroundTruth::sparse(10, 3, 0.0, 0.0, 0.4, Family::Gaussian).unwrap();
        let n = 10_000;
        let d = generate_dataset(&truth, n, &mut seeded(3)).unwrap();
        let r = cov(d.x(), d.y()) / (cov(d.x(), d.x()) * cov(d.y(), d.y())).sqrt();
        assert!(r.abs() < 3.0 / (n as f64).sqrt(), "corr {r}");
    }

    #[test]
    fn confounded_null_covariance_matches_quadratic_form() {
        let truth = GroundTruth::sparse(8, 3, 0.5, 0.0, 0.4, Family::Gaussian).unwrap();
        let sigma = ar1_covariance(8, 0.4).unwrap();
        let beta = nalgebra::DVector::from_vec(truth.coef_x.clone());
        let target = (beta.transpose() * &sigma * &beta)[(0, 0)];
        let d = generate_dataset(&truth, 20_000, &mut seeded(4)).unwrap();
        let c = cov(d.x(), d.y());
        // Var(XY) for this design is about 3; se ~ sqrt(3/n).
        assert!(
            (c - target).abs() < 4.0 * (3.0 / 20_000f64).sqrt(),
            "cov {c} vs {target}"
        );
    }

    #[test]
    fn alternative_slope_matches_theta() {
        let truth = GroundTruth::sparse(5, 2, 0.0, 0.5, 0.4, Family::Gaussian).unwrap();
        let d = generate_dataset(&truth, 10_000, &mut seeded(5)).unwrap();
        let slope = ols_slope(d.x(), d.y());
        assert!((slope - 0.5).abs() < 0.04, "slope {slope}");
    }

    #[test]
    fn binomial_dataset_has_binary_response() {
        let truth = GroundTruth::sparse(5, 2, 0.3, 0.5, 0.4, Family::Binomial).unwrap();
        let d = generate_dataset(&truth, 500, &mut seeded(6)).unwrap();
        assert!(d.y().iter().all(|&v| v == 0.0 || v == 1.0));
        let bad = Dataset::new(vec![0.0], vec![0.5], DMatrix::zeros(1, 1), Family::Binomial);
        assert!(bad.is_err());
    }

    #[test]
    fn point_null_with_zero_theta_matches_null_generator() {
        let truth = GroundTruth::sparse(6, 2, 0.4, 0.0, 0.3, Family::Gaussian).unwrap();
        let a = generate_dataset(&truth, 100, &mut seeded(8)).unwrap();
        let b = generate_point_null_dataset(&truth, 100, &mut seeded(8)).unwrap();
        assert_eq!(a.x(), b.x());
        assert_eq!(a.y(), b.y());
    }

    #[test]
    fn point_null_has_unit_variance_response_without_confounding() {
        let truth = GroundTruth::sparse(4, 2, 0.0, 1.0, 0.3, Family::Gaussian).unwrap();
        let d = generate_point_null_dataset(&truth, 10_000, &mut seeded(9)).unwrap();
        assert!(mean(d.y()).abs() < 0.04);
        assert!((cov(d.y(), d.y()) - 1.0).abs() < 0.06);
    }

    #[test]
    fn point_null_is_conditionally_independent() {
        let truth = GroundTruth::sparse(6, 3, 0.5, 1.0, 0.4, Family::Gaussian).unwrap();
        let n = 10_000;
        let d = generate_point_null_dataset(&truth, n, &mut seeded(10)).unwrap();
        let (mx, my) = true_conditional_means(&truth.clone().with_theta(0.0), d.z()).unwrap();
        // Under the point null E[Y|Z] = theta E[X|Z] + Z gamma.
        let my: Vec<f64> = my.iter().zip(&mx).map(|(a, b)| a + truth.theta * b).collect();
        let rx: Vec<f64> = d.x().iter().zip(&mx).map(|(a, b)| a - b).collect();
        let ry: Vec<f64> = d.y().iter().zip(&my).map(|(a, b)| a - b).collect();
        let r = cov(&rx, &ry) / (cov(&rx, &rx) * cov(&ry, &ry)).sqrt();
        assert!(r.abs() < 4.0 / (n as f64).sqrt(), "partial corr {r}");
    }

    #[test]
    fn conditional_means_closed_forms() {
        let truth = GroundTruth::sparse(3, 2, 0.7, 0.0, 0.2, Family::Gaussian).unwrap();
        let (mx, my) = true_conditional_means(&truth, &DMatrix::zeros(4, 3)).unwrap();
        assert!(mx.iter().chain(&my).all(|&v| v == 0.0));

        let bin = GroundTruth::sparse(3, 0, 0.0, 0.0, 0.2, Family::Binomial).unwrap();
        let z = sample_ar1_gaussian(5, 3, 0.2, &mut seeded(1)).unwrap();
        let (_, my) = true_conditional_means(&bin, &z).unwrap();
        assert!(my.iter().all(|&v| v == 0.5));

        let alt = truth.clone().with_theta(0.3);
        let (mx, my) = true_conditional_means(&alt, &z).unwrap();
        let expected: Vec<f64> = linear_predictor(
            &z,
            &alt.coef_y
                .iter()
                .zip(&alt.coef_x)
                .map(|(g, b)| g + 0.3 * b)
                .collect::<Vec<_>>(),
            0.0,
        );
        for (a, b) in my.iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert_eq!(mx, linear_predictor(&z, &alt.coef_x, 0.0));
    }

    #[test]
    fn alternative_conditional_mean_by_regression() {
        // Monte Carlo check of E[Y|Z] = Z(gamma + theta beta): regress y on the
        // claimed mean, slope should be one.
        let truth = GroundTruth::sparse(5, 2, 0.6, 0.3, 0.4, Family::Gaussian).unwrap();
        let d = generate_dataset(&truth, 20_000, &mut seeded(21)).unwrap();
        let (_, my) = true_conditional_means(&truth, d.z()).unwrap();
        assert!((ols_slope(&my, d.y()) - 1.0).abs() < 0.05);
    }

    #[test]
    fn binomial_alternative_mean_by_quadrature() {
        let truth = GroundTruth::sparse(3, 1, 0.5, 0.8, 0.0, Family::Binomial).unwrap();
        let z = DMatrix::from_row_slice(1, 3, &[0.4, 0.0, 0.0]);
        let (_, my) = true_conditional_means(&truth, &z).unwrap();
        // Brute-force Riemann sum over the X|Z density.
        let mx = 0.2;
        let h = 1e-3;
        let mut acc = 0.0;
        let mut t: f64 = -10.0;
        while t < 10.0 {
            let dens = (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
            acc += h * dens * logistic(0.8 * (mx + t) + 0.2);
            t += h;
        }
        assert_abs_diff_eq!(my[0], acc, epsilon = 1e-6);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let truth = GroundTruth::sparse(3, 1, 0.5, 0.0, 0.2, Family::Gaussian).unwrap();
        let d = generate_dataset(&truth, 20, &mut seeded(2)).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,y,z1,z2,z3\n"));
        let back = Dataset::read_csv(&buf[..], Family::Gaussian).unwrap();
        assert_eq!(back.x(), d.x());
        assert_eq!(back.z(), d.z());

        let bad = "x,y,z1\n1,2,3\n1,2,NaN\n";
        match Dataset::read_csv(bad.as_bytes(), Family::Gaussian) {
            Err(Error::InvalidInput(msg)) => assert!(msg.contains("row 2"), "{msg}"),
            other => panic!("expected invalid input, got {other:?}"),
        }
    }

    #[test]
    fn truncation_preserves_means() {
        let truth = GroundTruth::sparse(50, 5, 0.3, 0.0, 0.4, Family::Gaussian).unwrap();
        let t = truth.truncated(5).unwrap();
        assert_eq!(t.p(), 5);
        assert!(truth.truncated(3).is_err());
    }
}
