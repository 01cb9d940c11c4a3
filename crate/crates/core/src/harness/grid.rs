//! Null and power grids over the simulation design.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::calibrate::{CalibrationCache, CalibrationContext};
use super::methods::{roster_uses_design, run_methods, standard_roster, MethodSpec, Outcome, Replicate, Setting};
use crate::error::{Error, Result};
use crate::inference::{ErrorMetrics, Sidedness};
use crate::learners::LassoConfig;
use crate::model::{
    generate_dataset, generate_point_null_dataset, generate_semi_supervised, Dataset, Family, GroundTruth,
};
use crate::rng::{label_key, substream, SimRng};
use crate::stats::{binomial_se, quantile_sorted};

/// Replicate failures above this fraction abort the cell.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

/// Dimensions of one grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub rho: f64,
}

impl Cell {
    pub const DEFAULT: Cell = Cell {
        n: 200,
        p: 400,
        s: 5,
        rho: 0.4,
    };

    fn key(&self) -> u64 {
        label_key(&format!("{}|{}|{}|{}", self.n, self.p, self.s, self.rho))
    }
}

/// The default cell plus one-at-a-time variations of `n`, `p`, `s` and `rho`.
pub fn standard_cells() -> Vec<Cell> {
    let d = Cell::DEFAULT;
    let mut cells = vec![d];
    for n in [100, 400, 800, 1600] {
        cells.push(Cell { n, ..d });
    }
    for p in [100, 200, 800, 1600] {
        cells.push(Cell { p, ..d });
    }
    for s in [10, 20, 40, 80] {
        cells.push(Cell { s, ..d });
    }
    for rho in [0.0, 0.2, 0.6, 0.8] {
        cells.push(Cell { rho, ..d });
    }
    cells
}

/// One simulation point: a cell with fixed `(theta, nu)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub rho: f64,
    pub theta: f64,
    pub nu: f64,
    pub family: Family,
    pub setting: Setting,
    pub methods: Vec<MethodSpec>,
    pub n_reps: usize,
    pub alpha: f64,
    pub master_seed: u64,
    pub side: Sidedness,
    pub folds: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 200,
            p: 400,
            s: 5,
            rho: 0.4,
            theta: 0.0,
            nu: 0.0,
            family: Family::Gaussian,
            setting: Setting::Supervised,
            methods: standard_roster(400),
            n_reps: 400,
            alpha: 0.05,
            master_seed: 1,
            side: Sidedness::TwoSided,
            folds: 5,
        }
    }
}

impl SimConfig {
    fn cell(&self) -> Cell {
        Cell {
            n: self.n,
            p: self.p,
            s: self.s,
            rho: self.rho,
        }
    }

    fn truth(&self) -> Result<GroundTruth> {
        GroundTruth::sparse(self.p, self.s, self.nu, self.theta, self.rho, self.family)
    }

    fn stream_key(&self, label: &str) -> Vec<u64> {
        vec![
            label_key(label),
            self.cell().key(),
            label_key(self.family.as_str()),
            label_key(self.setting.as_str()),
            self.theta.to_bits(),
            self.nu.to_bits(),
        ]
    }
}

/// Aggregated results of one method at one simulation point.
#[derive(Clone, Debug, Serialize)]
pub struct GridResult {
    pub setting: Setting,
    pub family: Family,
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub rho: f64,
    pub theta: f64,
    pub nu: f64,
    pub method: String,
    pub n_reps: usize,
    pub rejection_rate: f64,
    pub mcse: f64,
    pub mean_p: f64,
    pub failures: usize,
    pub mean_metrics: Option<ErrorMetrics>,
    pub degenerate_resamples: usize,
    /// Oracle-calibrated lower and upper cutoffs, for power runs.
    pub cutoffs: Option<(f64, f64)>,
}

/// Writes results in the fixed CSV schema.
pub fn write_results_csv<W: Write>(results: &[GridResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "setting",
        "family",
        "n",
        "p",
        "s",
        "rho",
        "theta",
        "nu",
        "method",
        "n_reps",
        "rejection_rate",
        "mcse",
        "mean_p",
        "failures",
    ])?;
    for r in results {
        out.write_record([
            r.setting.as_str().to_string(),
            r.family.as_str().to_string(),
            r.n.to_string(),
            r.p.to_string(),
            r.s.to_string(),
            r.rho.to_string(),
            format!("{:.6}", r.theta),
            format!("{:.6}", r.nu),
            r.method.clone(),
            r.n_reps.to_string(),
            format!("{:.6}", r.rejection_rate),
            format!("{:.6}", r.mcse),
            format!("{:.6}", r.mean_p),
            r.failures.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Data for one replicate: the truth it was drawn from (possibly on fewer
/// covariates), the labeled data and optional unlabeled rows.
struct Draw {
    truth: GroundTruth,
    labeled: Dataset,
    semi: Option<crate::model::SemiSupervisedData>,
}

fn draw(cfg: &SimConfig, truth: &GroundTruth, point_null: bool, rng: &mut SimRng) -> Result<Draw> {
    // Methods that never look at Z beyond the true means see the same law on
    // the first s columns.
    let truth = if roster_uses_design(&cfg.methods) {
        truth.clone()
    } else {
        truth.truncated(cfg.s.max(1))?
    };
    match cfg.setting {
        Setting::Supervised => {
            let labeled = if point_null {
                generate_point_null_dataset(&truth, cfg.n, rng)?
            } else {
                generate_dataset(&truth, cfg.n, rng)?
            };
            Ok(Draw {
                truth,
                labeled,
                semi: None,
            })
        }
        Setting::SemiSupervised => {
            let semi = generate_semi_supervised(&truth, cfg.n, cfg.n, point_null, rng)?;
            Ok(Draw {
                truth,
                labeled: semi.labeled().clone(),
                semi: Some(semi),
            })
        }
    }
}

fn replicate(
    cfg: &SimConfig,
    truth: &GroundTruth,
    point_null: bool,
    statistic_only: bool,
    lasso: &LassoConfig,
    rng: &mut SimRng,
) -> Result<Vec<Result<Outcome>>> {
    let d = draw(cfg, truth, point_null, rng)?;
    let pooled;
    let x_rows = match &d.semi {
        Some(semi) => {
            pooled = semi.pooled_xz();
            (pooled.0.as_slice(), &pooled.1)
        }
        None => (d.labeled.x(), d.labeled.z()),
    };
    let rep = Replicate {
        truth: &d.truth,
        labeled: &d.labeled,
        x_rows,
        semi: d.semi.as_ref(),
        alpha: cfg.alpha,
        side: cfg.side,
        folds: cfg.folds,
        lasso,
        statistic_only,
    };
    Ok(run_methods(&cfg.methods, &rep, rng))
}

/// Runs `n_reps` replicates; entry `[r][k]` is method `k` on replicate `r`.
fn run_replicates(
    cfg: &SimConfig,
    label: &str,
    point_null: bool,
    statistic_only: bool,
    reps: usize,
) -> Result<Vec<Vec<Result<Outcome>>>> {
    let truth = cfg.truth()?;
    let lasso = LassoConfig::default();
    let key = cfg.stream_key(label);
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut k = key.clone();
            k.push(r as u64);
            let mut rng = substream(cfg.master_seed, &k);
            replicate(cfg, &truth, point_null, statistic_only, &lasso, &mut rng)
        })
        .collect()
}

fn aggregate(
    cfg: &SimConfig,
    k: usize,
    outcomes: &[&Result<Outcome>],
    decide: impl Fn(&Outcome) -> (bool, f64),
    cutoffs: Option<(f64, f64)>,
) -> Result<GridResult> {
    let method = cfg.methods[k].name.clone();
    let ok: Vec<&Outcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let failures = outcomes.len() - ok.len();
    if failures as f64 > MAX_FAILURE_FRACTION * outcomes.len() as f64 {
        let first = outcomes
            .iter()
            .find_map(|o| o.as_ref().err())
            .map(|e| e.to_string())
            .unwrap_or_default();
        log::warn!("{method}: {failures} failures, first: {first}");
        return Err(Error::ReplicateFailures {
            method,
            failures,
            reps: outcomes.len(),
        });
    }
    let m = ok.len().max(1) as f64;
    let mut rejections = 0usize;
    let mut sum_p = 0.0;
    for o in &ok {
        let (rej, p) = decide(o);
        rejections += rej as usize;
        sum_p += p;
    }
    let rate = rejections as f64 / m;
    let metrics: Vec<ErrorMetrics> = ok.iter().filter_map(|o| o.metrics).collect();
    Ok(GridResult {
        setting: cfg.setting,
        family: cfg.family,
        n: cfg.n,
        p: cfg.p,
        s: cfg.s,
        rho: cfg.rho,
        theta: cfg.theta,
        nu: cfg.nu,
        method,
        n_reps: outcomes.len(),
        rejection_rate: rate,
        mcse: binomial_se(rate, ok.len().max(1)),
        mean_p: sum_p / m,
        failures,
        mean_metrics: (!metrics.is_empty()).then(|| ErrorMetrics::average(&metrics)),
        degenerate_resamples: ok.iter().map(|o| o.degenerate).sum(),
        cutoffs,
    })
}

/// Type-I error (or rejection rate, for `theta != 0`) of every method at one
/// simulation point, using each method's own decision rule.
pub fn run_point(cfg: &SimConfig) -> Result<Vec<GridResult>> {
    let reps = run_replicates(cfg, "point", false, false, cfg.n_reps)?;
    let rows = reps;
    (0..cfg.methods.len())
        .map(|k| {
            let col: Vec<&Result<Outcome>> = rows.iter().map(|r| &r[k]).collect();
            aggregate(cfg, k, &col, |o| (o.reject, o.p_value), None)
        })
        .collect()
}

/// Power of every method at one simulation point under oracle calibration:
/// cutoffs are the 2.5% and 97.5% quantiles of each method's statistic over
/// `n_cal` draws from the point null closest to the alternative.
pub fn run_power_point(cfg: &SimConfig, n_cal: usize) -> Result<Vec<GridResult>> {
    if n_cal < 40 {
        return Err(Error::InvalidParameter(format!(
            "n_cal={n_cal} is too small for 2.5% quantiles"
        )));
    }
    let cal = run_replicates(cfg, "calibration", true, true, n_cal)?;
    let alt = run_replicates(cfg, "alternative", false, true, cfg.n_reps)?;
    let mut out = Vec::with_capacity(cfg.methods.len());
    for k in 0..cfg.methods.len() {
        let cal_col: Vec<&Result<Outcome>> = cal.iter().map(|r| &r[k]).collect();
        let mut null_stats: Vec<f64> = cal_col
            .iter()
            .filter_map(|o| o.as_ref().ok())
            .map(|o| o.statistic)
            .collect();
        let cal_failures = cal_col.len() - null_stats.len();
        if cal_failures as f64 > MAX_FAILURE_FRACTION * n_cal as f64 {
            return Err(Error::ReplicateFailures {
                method: cfg.methods[k].name.clone(),
                failures: cal_failures,
                reps: n_cal,
            });
        }
        null_stats.sort_by(f64::total_cmp);
        let lo = quantile_sorted(&null_stats, 0.025);
        let hi = quantile_sorted(&null_stats, 0.975);
        let ecdf = |t: f64| null_stats.partition_point(|&v| v <= t) as f64 / null_stats.len() as f64;
        let alt_col: Vec<&Result<Outcome>> = alt.iter().map(|r| &r[k]).collect();
        out.push(aggregate(
            cfg,
            k,
            &alt_col,
            |o| {
                let f = ecdf(o.statistic);
                let below = null_stats.partition_point(|&v| v < o.statistic) as f64 / null_stats.len() as f64;
                let p = (2.0 * f.min(1.0 - below)).min(1.0);
                (o.statistic < lo || o.statistic > hi, p)
            },
            Some((lo, hi)),
        )?);
    }
    Ok(out)
}

/// What a grid run computes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    #[default]
    Null,
    Power,
    Both,
}

/// A full study: cells, roster and Monte Carlo sizes. Deserializes from the
/// JSON accepted by the command line; missing fields take the defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub cells: Vec<Cell>,
    pub family: Family,
    pub setting: Setting,
    pub methods: Vec<MethodSpec>,
    pub kind: GridKind,
    pub n_reps: usize,
    pub n_cal: usize,
    pub calibration_reps: usize,
    pub alpha: f64,
    pub master_seed: u64,
    pub side: Sidedness,
    pub folds: usize,
    /// Fractions of `nu_max` for the null grid.
    pub nu_fractions: Vec<f64>,
    /// Fractions of `theta_max` for the power grid (`nu = nu_max / 2`).
    pub theta_fractions: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            cells: standard_cells(),
            family: Family::Gaussian,
            setting: Setting::Supervised,
            methods: standard_roster(400),
            kind: GridKind::Null,
            n_reps: 400,
            n_cal: 2000,
            calibration_reps: 1000,
            alpha: 0.05,
            master_seed: 1,
            side: Sidedness::TwoSided,
            folds: 5,
            nu_fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            theta_fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

impl GridSpec {
    /// The default cell only, with 100 replicates.
    pub fn fast() -> Self {
        GridSpec {
            cells: vec![Cell::DEFAULT],
            n_reps: 100,
            ..GridSpec::default()
        }
    }

    fn config(&self, cell: Cell, theta: f64, nu: f64) -> SimConfig {
        SimConfig {
            n: cell.n,
            p: cell.p,
            s: cell.s,
            rho: cell.rho,
            theta,
            nu,
            family: self.family,
            setting: self.setting,
            methods: self.methods.clone(),
            n_reps: self.n_reps,
            alpha: self.alpha,
            master_seed: self.master_seed,
            side: self.side,
            folds: self.folds,
        }
    }

    fn context(&self, cell: Cell) -> CalibrationContext {
        CalibrationContext {
            n: cell.n,
            p: cell.p,
            s: cell.s,
            rho: cell.rho,
            family: self.family,
        }
    }
}

/// Type-I error over `{0, 1/4, 1/2, 3/4, 1} * nu_max` in every cell.
pub fn run_null_grid(spec: &GridSpec, cache: &mut CalibrationCache) -> Result<Vec<GridResult>> {
    let mut out = Vec::new();
    for &cell in &spec.cells {
        let cal = cache.get_or_calibrate(spec.context(cell), spec.calibration_reps, spec.master_seed)?;
        for &f in &spec.nu_fractions {
            let cfg = spec.config(cell, 0.0, f * cal.nu_max);
            log::info!(
                "null cell n={} p={} s={} rho={} nu={:.4}",
                cell.n,
                cell.p,
                cell.s,
                cell.rho,
                cfg.nu
            );
            out.extend(run_point(&cfg)?);
        }
    }
    Ok(out)
}

/// Oracle-calibrated power over `{0, 1/4, 1/2, 3/4, 1} * theta_max` at
/// `nu = nu_max / 2` in every cell.
pub fn run_power_grid(spec: &GridSpec, cache: &mut CalibrationCache) -> Result<Vec<GridResult>> {
    let mut out = Vec::new();
    for &cell in &spec.cells {
        let cal = cache.get_or_calibrate(spec.context(cell), spec.calibration_reps, spec.master_seed)?;
        for &f in &spec.theta_fractions {
            let cfg = spec.config(cell, f * cal.theta_max, cal.nu_max / 2.0);
            log::info!(
                "power cell n={} p={} s={} rho={} theta={:.4}",
                cell.n,
                cell.p,
                cell.s,
                cell.rho,
                cfg.theta
            );
            out.extend(run_power_point(&cfg, spec.n_cal)?);
        }
    }
    Ok(out)
}

/// Runs whatever `spec.kind` asks for.
pub fn run_grid(spec: &GridSpec, cache: &mut CalibrationCache) -> Result<Vec<GridResult>> {
    let mut out = Vec::new();
    if matches!(spec.kind, GridKind::Null | GridKind::Both) {
        out.extend(run_null_grid(spec, cache)?);
    }
    if matches!(spec.kind, GridKind::Power | GridKind::Both) {
        out.extend(run_power_grid(spec, cache)?);
    }
    Ok(out)
}
