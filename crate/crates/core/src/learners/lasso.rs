//! Coordinate-descent lasso for Gaussian and logistic responses, with a
//! geometric regularization path, sequential strong-rule screening, KKT
//! verification, and K-fold cross-validation.
//!
//! Columns are standardized internally (mean zero, `(1/n)||x_j||^2 = 1`) and the
//! objective on that scale is
//!
//! ```text
//! (1/2n) ||y - b0 - X b||^2 + lambda ||b||_1           (gaussian)
//! (1/n) sum_i -loglik_i(b0 + x_i b) + lambda ||b||_1   (binomial)
//! ```
//!
//! Coefficients are reported on the original column scale.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use super::MeanModel;
use crate::error::{Error, Result};
use crate::model::Family;
use crate::stats::logistic;

/// Tuning of the path and the solver.
#[derive(Clone, Debug)]
pub struct LassoConfig {
    pub n_lambda: usize,
    /// `lambda_min / lambda_max` at the end of the path.
    pub lambda_ratio: f64,
    /// Coordinate-descent convergence for reported fits: largest coefficient
    /// change on the standardized scale.
    pub tol: f64,
    /// Looser convergence used along CV paths, in units of `sd(target)`
    /// (`sqrt(1e-7)`, glmnet's default threshold on the same scale).
    pub path_tol: f64,
    /// Gaussian fits with `n >= 4p` maintain the full score through cached
    /// Gram columns.
    pub covariance_updates: bool,
    pub max_sweeps: usize,
    pub max_irls: usize,
    /// IRLS stops when the relative deviance change falls below this.
    pub irls_tol: f64,
    /// IRLS tolerance along CV paths.
    pub path_irls_tol: f64,
    /// Path stops early once the fraction of deviance explained exceeds this.
    pub max_dev_ratio: f64,
    /// Path stops early once successive deviance ratios differ by less than this.
    pub min_dev_change: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            n_lambda: 100,
            lambda_ratio: 1e-3,
            tol: 1e-9,
            path_tol: 3.2e-4,
            covariance_updates: true,
            max_sweeps: 10_000,
            max_irls: 100,
            irls_tol: 1e-8,
            path_irls_tol: 1e-5,
            max_dev_ratio: 0.999,
            min_dev_change: 1e-5,
        }
    }
}

/// Column-standardized copy of a design matrix.
struct Standardized {
    n: usize,
    p: usize,
    /// Column-major `n x p`, zero for constant columns.
    data: Vec<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
    /// Columns with nonzero variance.
    usable: Vec<bool>,
}

impl Standardized {
    fn new(z: &DMatrix<f64>, rows: Option<&[usize]>) -> Standardized {
        let p = z.ncols();
        let full_n = z.nrows();
        let n = rows.map_or(full_n, |r| r.len());
        let src = z.as_slice();
        let mut data = vec![0.0; n * p];
        let mut means = vec![0.0; p];
        let mut scales = vec![0.0; p];
        let mut usable = vec![false; p];
        for j in 0..p {
            let col = &src[j * full_n..(j + 1) * full_n];
            let dst = &mut data[j * n..(j + 1) * n];
            match rows {
                Some(r) => {
                    for (d, &i) in dst.iter_mut().zip(r) {
                        *d = col[i];
                    }
                }
                None => dst.copy_from_slice(col),
            }
            let m = dst.iter().sum::<f64>() / n as f64;
            let ss = dst.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            let sd = ss.sqrt();
            means[j] = m;
            if sd > 1e-12 * (1.0 + m.abs()) {
                scales[j] = sd;
                usable[j] = true;
                for v in dst.iter_mut() {
                    *v = (*v - m) / sd;
                }
            } else {
                dst.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Standardized {
            n,
            p,
            data,
            means,
            scales,
            usable,
        }
    }

    #[inline]
    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    /// Maps standardized-scale `(b0, b)` to the original scale.
    fn unstandardize(&self, b0: f64, beta: &[f64]) -> (f64, Vec<f64>) {
        let mut coef = vec![0.0; self.p];
        let mut intercept = b0;
        for j in 0..self.p {
            if beta[j] != 0.0 {
                coef[j] = beta[j] / self.scales[j];
                intercept -= coef[j] * self.means[j];
            }
        }
        (intercept, coef)
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

/// `y -= d * x`.
#[inline]
fn axpy_neg(d: f64, x: &[f64], y: &mut [f64]) {
    for (r, &v) in y.iter_mut().zip(x) {
        *r -= d * v;
    }
}

#[inline]
fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

/// A computed regularization path on the standardized scale.
#[derive(Clone, Debug)]
pub struct LassoPath {
    pub lambdas: Vec<f64>,
    /// Intercept per computed lambda (standardized design, original response).
    pub intercepts: Vec<f64>,
    /// Coefficients per computed lambda, standardized scale.
    pub betas: Vec<Vec<f64>>,
    pub dev_ratios: Vec<f64>,
}

impl LassoPath {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// Solution index to use for grid position `k`; positions past an early
    /// stop reuse the last computed solution.
    fn index(&self, k: usize) -> usize {
        k.min(self.len() - 1)
    }
}

fn check_inputs(z: &DMatrix<f64>, target: &[f64], family: Family) -> Result<()> {
    if z.nrows() != target.len() {
        return Err(Error::InvalidInput(format!(
            "Z has {} rows, target has {}",
            z.nrows(),
            target.len()
        )));
    }
    if target.is_empty() {
        return Err(Error::InvalidInput("empty target".into()));
    }
    if !z.iter().chain(target).all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite entries in lasso input".into()));
    }
    if family == Family::Binomial && target.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidInput("binomial target must be 0/1".into()));
    }
    Ok(())
}

/// Smallest lambda at which every coefficient is zero.
fn lambda_max(xs: &Standardized, target: &[f64]) -> f64 {
    let ybar = target.iter().sum::<f64>() / target.len() as f64;
    let resid: Vec<f64> = target.iter().map(|v| v - ybar).collect();
    (0..xs.p)
        .filter(|&j| xs.usable[j])
        .map(|j| dot(xs.col(j), &resid).abs() / xs.n as f64)
        .fold(0.0, f64::max)
}

fn lambda_grid(lmax: f64, cfg: &LassoConfig) -> Vec<f64> {
    if cfg.n_lambda == 1 {
        return vec![lmax];
    }
    let step = cfg.lambda_ratio.ln() / (cfg.n_lambda - 1) as f64;
    (0..cfg.n_lambda).map(|k| lmax * (step * k as f64).exp()).collect()
}

fn binomial_deviance(y: &[f64], prob: &[f64]) -> f64 {
    -2.0 * y
        .iter()
        .zip(prob)
        .map(|(&yi, &pi)| {
            let pi = pi.clamp(1e-15, 1.0 - 1e-15);
            yi * pi.ln() + (1.0 - yi) * (1.0 - pi).ln()
        })
        .sum::<f64>()
}

/// Solver state carried along the path (warm starts).
struct PathSolver<'a> {
    xs: &'a Standardized,
    y: &'a [f64],
    family: Family,
    cfg: &'a LassoConfig,
    beta: Vec<f64>,
    b0: f64,
    /// Gaussian: `y - b0 - X b`. Binomial: working residual.
    resid: Vec<f64>,
    in_working: Vec<bool>,
    working: Vec<usize>,
    grad: Vec<f64>,
    tol: f64,
    irls_tol: f64,
    /// Gaussian covariance-update mode: `grad` is kept current through cached
    /// Gram columns instead of a residual vector.
    cov: bool,
    gram: Vec<Vec<f64>>,
}

impl<'a> PathSolver<'a> {
    fn new(xs: &'a Standardized, y: &'a [f64], family: Family, cfg: &'a LassoConfig) -> Self {
        let ybar = y.iter().sum::<f64>() / y.len() as f64;
        let (b0, resid) = match family {
            Family::Gaussian => (ybar, y.iter().map(|v| v - ybar).collect()),
            Family::Binomial => {
                let pbar = ybar.clamp(1e-6, 1.0 - 1e-6);
                ((pbar / (1.0 - pbar)).ln(), vec![0.0; y.len()])
            }
        };
        let mut s = PathSolver {
            xs,
            y,
            family,
            cfg,
            beta: vec![0.0; xs.p],
            b0,
            resid,
            in_working: vec![false; xs.p],
            working: Vec::new(),
            grad: vec![0.0; xs.p],
            tol: cfg.tol,
            irls_tol: cfg.irls_tol,
            cov: family == Family::Gaussian && cfg.covariance_updates && 4 * xs.p <= xs.n,
            gram: vec![Vec::new(); xs.p],
        };
        s.refresh_gradient();
        s
    }

    /// Restarts from a previously computed solution.
    fn warm_start(&mut self, b0: f64, beta: &[f64]) {
        self.beta.copy_from_slice(beta);
        self.b0 = b0;
        if self.family == Family::Gaussian && !self.cov {
            let eta = self.eta();
            for (r, (yi, e)) in self.resid.iter_mut().zip(self.y.iter().zip(&eta)) {
                *r = yi - e;
            }
        }
        self.refresh_gradient();
    }

    fn add_working(&mut self, j: usize) {
        if !self.in_working[j] {
            self.in_working[j] = true;
            self.working.push(j);
        }
    }

    fn eta(&self) -> Vec<f64> {
        let mut eta = vec![self.b0; self.xs.n];
        for j in 0..self.xs.p {
            let b = self.beta[j];
            if b != 0.0 {
                for (e, &v) in eta.iter_mut().zip(self.xs.col(j)) {
                    *e += b * v;
                }
            }
        }
        eta
    }

    /// Score `(1/n) x_j^T (y - mu)` for every column at the current fit.
    fn refresh_gradient(&mut self) {
        let n = self.xs.n as f64;
        let score_resid: Vec<f64> = match self.family {
            Family::Gaussian if !self.cov => self.resid.clone(),
            Family::Gaussian => self.eta().iter().zip(self.y).map(|(&e, &yi)| yi - e).collect(),
            Family::Binomial => self
                .eta()
                .iter()
                .zip(self.y)
                .map(|(&e, &yi)| yi - logistic(e))
                .collect(),
        };
        for j in 0..self.xs.p {
            self.grad[j] = if self.xs.usable[j] {
                dot(self.xs.col(j), &score_resid) / n
            } else {
                0.0
            };
        }
    }

    /// Gram column `(1/n) X^T x_j`, computed on first use.
    fn ensure_gram(&mut self, j: usize) {
        if self.gram[j].is_empty() {
            let n = self.xs.n as f64;
            let cj = self.xs.col(j);
            self.gram[j] = (0..self.xs.p)
                .map(|k| {
                    if self.xs.usable[k] {
                        dot(self.xs.col(k), cj) / n
                    } else {
                        0.0
                    }
                })
                .collect();
        }
    }

    fn deviance(&self) -> f64 {
        match self.family {
            Family::Gaussian if !self.cov => self.resid.iter().map(|r| r * r).sum(),
            Family::Gaussian => self.eta().iter().zip(self.y).map(|(e, yi)| (yi - e) * (yi - e)).sum(),
            Family::Binomial => {
                let prob: Vec<f64> = self.eta().into_iter().map(logistic).collect();
                binomial_deviance(self.y, &prob)
            }
        }
    }

    /// One coordinate-descent pass over the working set; returns the largest change.
    fn gaussian_sweep(&mut self, lambda: f64, only_nonzero: bool) -> f64 {
        let n = self.xs.n as f64;
        let mut max_delta: f64 = 0.0;
        for k in 0..self.working.len() {
            let j = self.working[k];
            let old = self.beta[j];
            if only_nonzero && old == 0.0 {
                continue;
            }
            if self.cov {
                let new = soft_threshold(self.grad[j] + old, lambda);
                if new != old {
                    let d = new - old;
                    self.ensure_gram(j);
                    for (g, &c) in self.grad.iter_mut().zip(&self.gram[j]) {
                        *g -= d * c;
                    }
                    self.beta[j] = new;
                    max_delta = max_delta.max(d.abs());
                }
                continue;
            }
            let col = self.xs.col(j);
            let g = dot(col, &self.resid) / n + old;
            let new = soft_threshold(g, lambda);
            if new != old {
                let d = new - old;
                axpy_neg(d, col, &mut self.resid);
                self.beta[j] = new;
                max_delta = max_delta.max(d.abs());
            }
        }
        max_delta
    }

    /// Gaussian coordinate descent over the working set: a full pass, then
    /// passes over the nonzero coefficients until they settle, repeated until a
    /// full pass changes nothing beyond tolerance.
    fn gaussian_cd(&mut self, lambda: f64) -> Result<()> {
        let mut sweeps = 0;
        loop {
            let full = self.gaussian_sweep(lambda, false);
            sweeps += 1;
            if full < self.tol {
                return Ok(());
            }
            loop {
                let d = self.gaussian_sweep(lambda, true);
                sweeps += 1;
                if d < self.tol {
                    break;
                }
                if sweeps >= self.cfg.max_sweeps {
                    return Err(Error::ConvergenceFailure {
                        iterations: sweeps,
                        message: format!("coordinate descent at lambda={lambda:.3e}, last change {d:.3e}"),
                    });
                }
            }
        }
    }

    /// One penalized IRLS solve at `lambda` over the working set.
    fn binomial_irls(&mut self, lambda: f64) -> Result<()> {
        let n = self.xs.n;
        let nf = n as f64;
        let mut dev_old = self.deviance();
        for iter in 0..self.cfg.max_irls {
            let eta = self.eta();
            let mut w = vec![0.0; n];
            for i in 0..n {
                let pi = logistic(eta[i]).clamp(1e-5, 1.0 - 1e-5);
                w[i] = pi * (1.0 - pi);
                // Working residual z_i - eta_i with z the working response.
                self.resid[i] = (self.y[i] - logistic(eta[i])) / w[i];
            }
            let wsum: f64 = w.iter().sum();
            // Weighted working residual w_i (z_i - eta_i).
            let mut wr: Vec<f64> = self.resid.iter().zip(&w).map(|(r, wi)| r * wi).collect();
            let xv: Vec<f64> = (0..self.xs.p)
                .map(|j| {
                    if self.in_working[j] {
                        self.xs.col(j).iter().zip(&w).map(|(v, wi)| wi * v * v).sum::<f64>() / nf
                    } else {
                        0.0
                    }
                })
                .collect();
            let mut sweeps = 0;
            let mut only_nonzero = false;
            loop {
                let mut max_delta: f64 = 0.0;
                // Unpenalized intercept.
                let d0 = wr.iter().sum::<f64>() / wsum;
                if d0 != 0.0 {
                    self.b0 += d0;
                    for (a, wi) in wr.iter_mut().zip(&w) {
                        *a -= d0 * wi;
                    }
                    max_delta = max_delta.max(d0.abs());
                }
                for k in 0..self.working.len() {
                    let j = self.working[k];
                    let old = self.beta[j];
                    if only_nonzero && old == 0.0 {
                        continue;
                    }
                    let col = self.xs.col(j);
                    let g = dot(col, &wr) / nf + xv[j] * old;
                    let new = soft_threshold(g, lambda) / xv[j];
                    if new != old {
                        let d = new - old;
                        for ((a, &v), wi) in wr.iter_mut().zip(col).zip(&w) {
                            *a -= d * v * wi;
                        }
                        self.beta[j] = new;
                        max_delta = max_delta.max(d.abs());
                    }
                }
                sweeps += 1;
                if max_delta < self.tol {
                    if !only_nonzero {
                        break;
                    }
                    only_nonzero = false;
                } else if !only_nonzero {
                    only_nonzero = true;
                }
                if sweeps >= self.cfg.max_sweeps {
                    return Err(Error::ConvergenceFailure {
                        iterations: sweeps,
                        message: format!("weighted coordinate descent at lambda={lambda:.3e}"),
                    });
                }
            }
            let dev = self.deviance();
            if (dev_old - dev).abs() <= self.irls_tol * (dev.abs() + 0.1) {
                return Ok(());
            }
            dev_old = dev;
            if iter + 1 == self.cfg.max_irls {
                return Err(Error::ConvergenceFailure {
                    iterations: self.cfg.max_irls,
                    message: format!("penalized IRLS at lambda={lambda:.3e}, deviance {dev:.6e}"),
                });
            }
        }
        Ok(())
    }

    /// Solves at `lambda` given the previous path point `lambda_prev`.
    fn solve(&mut self, lambda: f64, lambda_prev: f64) -> Result<()> {
        // Sequential strong rule.
        let cutoff = 2.0 * lambda - lambda_prev;
        for j in 0..self.xs.p {
            if self.xs.usable[j] && (self.beta[j] != 0.0 || self.grad[j].abs() >= cutoff) {
                self.add_working(j);
            }
        }
        loop {
            match self.family {
                Family::Gaussian => self.gaussian_cd(lambda)?,
                Family::Binomial => self.binomial_irls(lambda)?,
            }
            if !self.cov {
                self.refresh_gradient();
            }
            let mut violated = false;
            for j in 0..self.xs.p {
                if self.xs.usable[j] && !self.in_working[j] && self.grad[j].abs() > lambda {
                    self.add_working(j);
                    violated = true;
                }
            }
            if !violated {
                return Ok(());
            }
        }
    }
}

fn sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

fn compute_path(xs: &Standardized, y: &[f64], family: Family, lambdas: &[f64], cfg: &LassoConfig) -> Result<LassoPath> {
    let mut solver = PathSolver::new(xs, y, family, cfg);
    solver.tol = cfg.path_tol * sd(y).max(1e-12);
    solver.irls_tol = cfg.path_irls_tol;
    let null_dev = solver.deviance();
    let mut path = LassoPath {
        lambdas: Vec::with_capacity(lambdas.len()),
        intercepts: Vec::new(),
        betas: Vec::new(),
        dev_ratios: Vec::new(),
    };
    let mut prev = lambdas.first().copied().unwrap_or(0.0);
    for &lambda in lambdas {
        if let Err(e) = solver.solve(lambda, prev) {
            // As in glmnet, a point that fails to converge ends the path; the
            // solutions for larger lambdas stand.
            if path.is_empty() {
                return Err(e);
            }
            log::debug!("lasso path truncated at lambda={lambda:.3e}: {e}");
            break;
        }
        prev = lambda;
        let dev_ratio = if null_dev > 0.0 {
            1.0 - solver.deviance() / null_dev
        } else {
            0.0
        };
        let n_active = solver.beta.iter().filter(|&&b| b != 0.0).count();
        let last_ratio = path.dev_ratios.last().copied();
        path.lambdas.push(lambda);
        path.intercepts.push(solver.b0);
        path.betas.push(solver.beta.clone());
        path.dev_ratios.push(dev_ratio);
        let saturated = dev_ratio > cfg.max_dev_ratio
            || n_active + 1 >= xs.n
            || last_ratio
                .is_some_and(|r| n_active > 0 && dev_ratio - r < cfg.min_dev_change * dev_ratio.abs().max(1e-12));
        if saturated {
            break;
        }
    }
    Ok(path)
}

/// Lasso at a single fixed `lambda` (standardized-column scale).
pub fn fit_lasso_fixed(
    z: &DMatrix<f64>,
    target: &[f64],
    family: Family,
    lambda: f64,
    cfg: &LassoConfig,
) -> Result<MeanModel> {
    check_inputs(z, target, family)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
    }
    let xs = Standardized::new(z, None);
    let mut solver = PathSolver::new(&xs, target, family, cfg);
    let lmax = lambda_max(&xs, target);
    solver.solve(lambda, lmax.max(lambda))?;
    let (b0, coef) = xs.unstandardize(solver.b0, &solver.beta);
    Ok(MeanModel::from_parts(b0, coef, family))
}

/// Standardized-scale view of a fit, for optimality checks.
#[derive(Clone, Debug)]
pub struct KktReport {
    /// `(1/n) x_j^T (y - fitted)` on standardized columns.
    pub scores: Vec<f64>,
    pub beta: Vec<f64>,
    pub lambda: f64,
}

impl KktReport {
    /// Largest violation of the lasso optimality conditions.
    pub fn max_violation(&self) -> (f64, f64) {
        let mut inactive: f64 = 0.0;
        let mut active: f64 = 0.0;
        for (g, b) in self.scores.iter().zip(&self.beta) {
            if *b == 0.0 {
                inactive = inactive.max(g.abs() - self.lambda);
            } else {
                active = active.max((g - self.lambda * b.signum()).abs());
            }
        }
        (inactive, active)
    }
}

/// Evaluates the gaussian KKT scores of an original-scale model at `lambda`.
pub fn gaussian_kkt(z: &DMatrix<f64>, target: &[f64], model: &MeanModel, lambda: f64) -> KktReport {
    let xs = Standardized::new(z, None);
    let fitted = model.predict_linear(z);
    let resid: Vec<f64> = target.iter().zip(&fitted).map(|(t, f)| t - f).collect();
    let scores = (0..xs.p)
        .map(|j| {
            if xs.usable[j] {
                dot(xs.col(j), &resid) / xs.n as f64
            } else {
                0.0
            }
        })
        .collect();
    let beta = (0..xs.p).map(|j| model.coefficients()[j] * xs.scales[j]).collect();
    KktReport { scores, beta, lambda }
}

/// Result of cross-validated lasso fitting.
#[derive(Clone, Debug)]
pub struct LassoCv {
    pub model: MeanModel,
    pub lambdas: Vec<f64>,
    /// Mean held-out loss per lambda (squared error or binomial deviance).
    pub cv_loss: Vec<f64>,
    pub lambda_min: f64,
    pub index_min: usize,
    /// Number of path points computed on the full data before early stopping.
    pub path_len: usize,
}

/// Fold labels: shuffled (within class for binomial targets) and dealt
/// round-robin, so fold sizes differ by at most one.
pub fn fold_assignment<R: Rng + ?Sized>(target: &[f64], family: Family, folds: usize, rng: &mut R) -> Vec<usize> {
    let n = target.len();
    let mut labels = vec![0; n];
    let groups: Vec<Vec<usize>> = match family {
        Family::Gaussian => vec![(0..n).collect()],
        Family::Binomial => vec![
            (0..n).filter(|&i| target[i] == 0.0).collect(),
            (0..n).filter(|&i| target[i] != 0.0).collect(),
        ],
    };
    let mut k = 0;
    for mut g in groups {
        g.shuffle(rng);
        for i in g {
            labels[i] = k % folds;
            k += 1;
        }
    }
    labels
}

/// Cross-validated lasso: path from `lambda_max` down by `lambda_ratio`,
/// lambda chosen to minimize K-fold held-out loss, refit on the full data.
pub fn fit_lasso_cv<R: Rng + ?Sized>(
    z: &DMatrix<f64>,
    target: &[f64],
    family: Family,
    folds: usize,
    cfg: &LassoConfig,
    rng: &mut R,
) -> Result<LassoCv> {
    check_inputs(z, target, family)?;
    let n = target.len();
    if folds < 2 || folds > n {
        return Err(Error::InvalidParameter(format!(
            "need 2 <= folds <= n, got folds={folds}, n={n}"
        )));
    }
    let labels = fold_assignment(target, family, folds, rng);
    fit_lasso_cv_with_folds(z, target, family, &labels, cfg)
}

/// Cross-validated lasso with caller-supplied fold labels `0..K`.
pub fn fit_lasso_cv_with_folds(
    z: &DMatrix<f64>,
    target: &[f64],
    family: Family,
    labels: &[usize],
    cfg: &LassoConfig,
) -> Result<LassoCv> {
    check_inputs(z, target, family)?;
    let n = target.len();
    if labels.len() != n {
        return Err(Error::InvalidInput("one fold label per row required".into()));
    }
    let folds = labels.iter().max().map_or(0, |m| m + 1);
    let xs = Standardized::new(z, None);
    let lmax = lambda_max(&xs, target);
    if lmax == 0.0 {
        // No usable signal at all: every lambda gives the null model.
        let model = MeanModel::from_parts(super::intercept_value(target, family).1, vec![0.0; z.ncols()], family);
        return Ok(LassoCv {
            model,
            lambdas: vec![0.0],
            cv_loss: vec![f64::NAN],
            lambda_min: 0.0,
            index_min: 0,
            path_len: 1,
        });
    }
    let lambdas = lambda_grid(lmax, cfg);
    let full = compute_path(&xs, target, family, &lambdas, cfg)?;

    let mut loss = vec![0.0; lambdas.len()];
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| labels[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| labels[i] == f).collect();
        let xs_tr = Standardized::new(z, Some(&train));
        let y_tr: Vec<f64> = train.iter().map(|&i| target[i]).collect();
        let path = compute_path(&xs_tr, &y_tr, family, &lambdas, cfg)?;
        let fitted: Vec<(f64, Vec<f64>)> = (0..path.len())
            .map(|k| xs_tr.unstandardize(path.intercepts[k], &path.betas[k]))
            .collect();
        let zsl = z.as_slice();
        for (k, l) in loss.iter_mut().enumerate() {
            let (b0, coef) = &fitted[path.index(k)];
            for &i in &test {
                let mut eta = *b0;
                for (j, &c) in coef.iter().enumerate() {
                    if c != 0.0 {
                        eta += c * zsl[j * n + i];
                    }
                }
                *l += match family {
                    Family::Gaussian => (target[i] - eta).powi(2),
                    Family::Binomial => binomial_deviance(&[target[i]], &[logistic(eta)]),
                };
            }
        }
    }
    loss.iter_mut().for_each(|l| *l /= n as f64);
    let index_min = loss
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let k = full.index(index_min);
    // Polish the selected solution to full precision.
    let mut solver = PathSolver::new(&xs, target, family, cfg);
    solver.warm_start(full.intercepts[k], &full.betas[k]);
    solver.solve(full.lambdas[k], full.lambdas[k])?;
    let (b0, coef) = xs.unstandardize(solver.b0, &solver.beta);
    Ok(LassoCv {
        model: MeanModel::from_parts(b0, coef, family),
        lambda_min: lambdas[index_min],
        lambdas,
        cv_loss: loss,
        index_min,
        path_len: full.len(),
    })
}
