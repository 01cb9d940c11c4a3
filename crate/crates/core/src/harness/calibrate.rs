//! Bisection calibration of the confounding scale `nu_max` and the signal
//! scale `theta_max`, with a JSON cache.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{gcm_test, marginal_gcm, Sidedness};
use crate::learners::{fit_oracle, Which};
use crate::model::{generate_dataset, Family, GroundTruth};
use crate::rng::{label_key, substream};

/// Rejection rate both calibrations aim for.
pub const CALIBRATION_TARGET: f64 = 0.99;
/// Accepted distance of the Monte Carlo rate from the target.
pub const CALIBRATION_TOLERANCE: f64 = 0.01;
/// Bisection stops once the bracket is narrower than this.
pub const BRACKET_WIDTH: f64 = 1e-3;
const CALIBRATION_ALPHA: f64 = 0.05;
const MAX_UPPER: f64 = (1u64 << 20) as f64;

/// One bracket visited by the bisection, with the rates at both ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lo: f64,
    pub rate_lo: f64,
    pub hi: f64,
    pub rate_hi: f64,
}

/// A calibrated value and how it was reached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibrated {
    pub value: f64,
    pub rate: f64,
    pub brackets: Vec<Bracket>,
}

/// Cell parameters a calibration depends on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationContext {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub rho: f64,
    pub family: Family,
}

/// Calibrated scales of one grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub nu_max: f64,
    pub theta_max: f64,
    pub target_error: f64,
    pub context: CalibrationContext,
    pub nu_brackets: Vec<Bracket>,
    pub theta_brackets: Vec<Bracket>,
}

/// Whether a Monte Carlo rate counts as hitting the target. A rate of exactly
/// one is excluded: it says only that the value is too large.
fn on_target(r: f64) -> bool {
    (r - CALIBRATION_TARGET).abs() <= CALIBRATION_TOLERANCE && r < 1.0
}

/// Bisection for a value whose rate hits the target. `rate` must be
/// nondecreasing; the bracket endpoints are checked before every split.
pub fn bisect_rate<F: Fn(f64) -> Result<f64>>(rate: F) -> Result<Calibrated> {
    let mut brackets = Vec::new();
    let mut lo = 0.0;
    let mut rate_lo = rate(lo)?;
    let mut hi = 1.0;
    let mut rate_hi = rate(hi)?;
    let monotone = |lo: f64, rl: f64, hi: f64, rh: f64| {
        if rl > rh {
            Err(Error::CalibrationFailure(format!(
                "rate not monotone on [{lo}, {hi}]: {rl} > {rh}"
            )))
        } else {
            Ok(())
        }
    };
    while rate_hi < CALIBRATION_TARGET - CALIBRATION_TOLERANCE {
        monotone(lo, rate_lo, hi, rate_hi)?;
        brackets.push(Bracket {
            lo,
            rate_lo,
            hi,
            rate_hi,
        });
        lo = hi;
        rate_lo = rate_hi;
        hi *= 2.0;
        if hi > MAX_UPPER {
            return Err(Error::CalibrationFailure(format!(
                "rate stayed at {rate_hi:.3} up to {lo}; bracket expansion exceeded 2^20"
            )));
        }
        rate_hi = rate(hi)?;
    }
    loop {
        monotone(lo, rate_lo, hi, rate_hi)?;
        brackets.push(Bracket {
            lo,
            rate_lo,
            hi,
            rate_hi,
        });
        if on_target(rate_hi) || hi - lo < BRACKET_WIDTH {
            return Ok(Calibrated {
                value: hi,
                rate: rate_hi,
                brackets,
            });
        }
        let mid = 0.5 * (lo + hi);
        let r = rate(mid)?;
        if r < CALIBRATION_TARGET - CALIBRATION_TOLERANCE {
            lo = mid;
            rate_lo = r;
        } else {
            hi = mid;
            rate_hi = r;
        }
    }
}

fn check_reps(reps: usize) -> Result<()> {
    if reps < 500 {
        return Err(Error::InvalidParameter(format!(
            "calibration needs at least 500 replicates, got {reps}"
        )));
    }
    Ok(())
}

/// Two-sided marginal GCM rejection rate at confounding strength `nu`. Only the
/// first `s` covariates enter the model, so data are drawn on those alone.
pub fn marginal_rejection_rate(
    n: usize,
    s: usize,
    rho: f64,
    nu: f64,
    family: Family,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    let truth = GroundTruth::sparse(s, s, nu, 0.0, rho, family)?;
    let hits: usize = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, &[label_key("nu_max"), r as u64]);
            let d = generate_dataset(&truth, n, &mut rng)?;
            Ok(match marginal_gcm(&d, CALIBRATION_ALPHA, Sidedness::TwoSided) {
                Ok(t) => t.reject as usize,
                Err(Error::DegenerateVariance(_)) => 0,
                Err(e) => return Err(e),
            })
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    Ok(hits as f64 / reps as f64)
}

/// Two-sided oracle GCM power at signal `theta`.
pub fn oracle_power(
    n: usize,
    s: usize,
    rho: f64,
    nu: f64,
    theta: f64,
    family: Family,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    let truth = GroundTruth::sparse(s, s, nu, theta, rho, family)?;
    let mx = fit_oracle(&truth, Which::X);
    let my = fit_oracle(&truth, Which::Y);
    let hits: usize = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, &[label_key("theta_max"), r as u64]);
            let d = generate_dataset(&truth, n, &mut rng)?;
            Ok(match gcm_test(&d, &mx, &my, CALIBRATION_ALPHA, Sidedness::TwoSided) {
                Ok(t) => t.reject as usize,
                Err(Error::DegenerateVariance(_)) => 0,
                Err(e) => return Err(e),
            })
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    Ok(hits as f64 / reps as f64)
}

/// `nu` at which the two-sided marginal GCM rejects the null 99% of the time.
/// The same seeds are used at every `nu`, so the rate is a monotone step
/// function along the bisection.
pub fn calibrate_nu_max(
    n: usize,
    p: usize,
    s: usize,
    rho: f64,
    family: Family,
    reps: usize,
    seed: u64,
) -> Result<Calibrated> {
    check_reps(reps)?;
    if s > p || s == 0 {
        return Err(Error::InvalidParameter(format!("need 1 <= s <= p, got s={s}, p={p}")));
    }
    bisect_rate(|nu| marginal_rejection_rate(n, s, rho, nu, family, reps, seed))
}

/// `theta` at which the two-sided oracle GCM has 99% power, with `nu` fixed.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_theta_max(
    n: usize,
    p: usize,
    s: usize,
    rho: f64,
    nu: f64,
    family: Family,
    reps: usize,
    seed: u64,
) -> Result<Calibrated> {
    check_reps(reps)?;
    if s > p || s == 0 {
        return Err(Error::InvalidParameter(format!("need 1 <= s <= p, got s={s}, p={p}")));
    }
    bisect_rate(|theta| oracle_power(n, s, rho, nu, theta, family, reps, seed))
}

/// Calibrations stored as JSON, keyed by cell, replicate count and seed.
#[derive(Debug, Default)]
pub struct CalibrationCache {
    path: Option<PathBuf>,
    entries: BTreeMap<String, Calibration>,
}

impl CalibrationCache {
    /// A cache that is never written to disk.
    pub fn in_memory() -> Self {
        CalibrationCache::default()
    }

    /// Loads `path` if it exists.
    pub fn open(path: &Path) -> Result<Self> {
        let entries = if path.exists() {
            serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?
        } else {
            BTreeMap::new()
        };
        Ok(CalibrationCache {
            path: Some(path.to_path_buf()),
            entries,
        })
    }

    /// `calibrations.json` under `CITEST_CACHE_DIR`, or an in-memory cache when
    /// the variable is unset.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os("CITEST_CACHE_DIR") {
            Some(dir) => {
                std::fs::create_dir_all(&dir)?;
                CalibrationCache::open(&Path::new(&dir).join("calibrations.json"))
            }
            None => Ok(CalibrationCache::in_memory()),
        }
    }

    fn key(ctx: &CalibrationContext, reps: usize, seed: u64) -> String {
        format!(
            "n={}|p={}|s={}|rho={}|family={}|reps={}|seed={}",
            ctx.n,
            ctx.p,
            ctx.s,
            ctx.rho,
            ctx.family.as_str(),
            reps,
            seed
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Cached calibration of `ctx`, computing and persisting it when absent.
    /// `theta_max` is calibrated at `nu_max / 2`.
    pub fn get_or_calibrate(&mut self, ctx: CalibrationContext, reps: usize, seed: u64) -> Result<Calibration> {
        let key = Self::key(&ctx, reps, seed);
        if let Some(c) = self.entries.get(&key) {
            return Ok(c.clone());
        }
        let nu = calibrate_nu_max(ctx.n, ctx.p, ctx.s, ctx.rho, ctx.family, reps, seed)?;
        let theta = calibrate_theta_max(ctx.n, ctx.p, ctx.s, ctx.rho, nu.value / 2.0, ctx.family, reps, seed)?;
        log::info!(
            "calibrated {key}: nu_max={:.4} (rate {:.3}), theta_max={:.4} (power {:.3})",
            nu.value,
            nu.rate,
            theta.value,
            theta.rate
        );
        let cal = Calibration {
            nu_max: nu.value,
            theta_max: theta.value,
            target_error: CALIBRATION_TARGET,
            context: ctx,
            nu_brackets: nu.brackets,
            theta_brackets: theta.brackets,
        };
        self.entries.insert(key, cal.clone());
        self.save()?;
        Ok(cal)
    }

    fn save(&self) -> Result<()> {
        if let Some(path) = &self.path {
            let tmp = path.with_extension("json.tmp");
            serde_json::to_writer_pretty(std::io::BufWriter::new(std::fs::File::create(&tmp)?), &self.entries)?;
            std::fs::rename(tmp, path)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisection_on_a_known_curve() {
        // rate(v) = min(1, v / 3): the target 0.99 is reached near 2.97.
        let c = bisect_rate(|v| Ok((v / 3.0).min(1.0))).unwrap();
        assert!((c.rate - 0.99).abs() <= 0.01);
        assert!(c.value > 2.9 && c.value <= 3.0, "{}", c.value);
        for b in &c.brackets {
            assert!(b.rate_lo <= b.rate_hi);
        }
    }

    #[test]
    fn bisection_rejects_a_flat_curve() {
        assert!(matches!(bisect_rate(|_| Ok(0.5)), Err(Error::CalibrationFailure(_))));
    }

    #[test]
    fn bisection_rejects_a_decreasing_curve() {
        let r = bisect_rate(|v| {
            Ok(if v == 0.0 {
                0.9
            } else {
                0.5 + 0.49 * (v - 1.0).clamp(0.0, 1.0)
            })
        });
        assert!(matches!(r, Err(Error::CalibrationFailure(_))));
    }

    #[test]
    fn a_rate_of_one_is_not_on_target() {
        // rate(v) = 1 for v >= 1: bisection narrows instead of accepting v = 1.
        let c = bisect_rate(|v| Ok(if v >= 0.5 { 1.0 } else { v })).unwrap();
        assert!(c.value < 0.5 + BRACKET_WIDTH);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let ctx = CalibrationContext {
            n: 60,
            p: 10,
            s: 2,
            rho: 0.4,
            family: Family::Gaussian,
        };
        let first = CalibrationCache::open(&path)
            .unwrap()
            .get_or_calibrate(ctx, 500, 3)
            .unwrap();
        let mut again = CalibrationCache::open(&path).unwrap();
        assert_eq!(again.len(), 1);
        assert_eq!(again.get_or_calibrate(ctx, 500, 3).unwrap(), first);
    }
}
