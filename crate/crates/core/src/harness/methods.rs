//! Method descriptors and their evaluation on one simulated replicate.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{
    dcrt_hat, error_metrics, gcm_test, maxway_crt, maxway_crt_supervised, mx2_f_test, ndcrt_hat, CondLawX,
    ErrorMetrics, MaxwayOptions, Sampler, Sidedness, TestResult,
};
use crate::learners::{
    fit_intercept_only, fit_lasso_cv, fit_oracle, fit_post_lasso_from, ConditionalMean, LassoConfig, MeanModel,
    OracleMean, VarianceEstimator, Which,
};
use crate::model::{Dataset, Family, GroundTruth, SemiSupervisedData};

/// How a conditional mean is estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanLearner {
    Lasso,
    PostLasso,
    Intercept,
    Oracle,
}

/// The test applied to the fitted means.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Gcm,
    Dcrt,
    Ndcrt,
    Mx2,
    Maxway,
}

/// Variance of the resampling law of `X | Z`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceChoice {
    /// One constant: the mean squared residual of the `X` fit on its training rows.
    #[default]
    MeanSquaredResidual,
    /// Row-wise squared residuals.
    ResidualSquared,
    /// The true conditional variance (1, or `mu(1-mu)` for binary `X`).
    Truth,
}

/// One entry of a method roster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub test: TestKind,
    pub x_learner: MeanLearner,
    pub y_learner: MeanLearner,
    #[serde(default)]
    pub variance: VarianceChoice,
    /// Resamples for resampling-based tests.
    #[serde(default = "default_m")]
    pub m: usize,
}

fn default_m() -> usize {
    400
}

impl MethodSpec {
    pub fn new(name: &str, test: TestKind, x_learner: MeanLearner, y_learner: MeanLearner, m: usize) -> MethodSpec {
        MethodSpec {
            name: name.to_string(),
            test,
            x_learner,
            y_learner,
            variance: VarianceChoice::MeanSquaredResidual,
            m,
        }
    }

    fn uses_design(&self) -> bool {
        self.test == TestKind::Maxway
            || [self.x_learner, self.y_learner]
                .iter()
                .any(|l| matches!(l, MeanLearner::Lasso | MeanLearner::PostLasso))
    }
}

/// The seven methods of the main comparison.
pub fn standard_roster(m: usize) -> Vec<MethodSpec> {
    use MeanLearner::*;
    vec![
        MethodSpec::new("GCM (LASSO)", TestKind::Gcm, Lasso, Lasso, m),
        MethodSpec::new("dCRT-hat (LASSO)", TestKind::Dcrt, Lasso, Lasso, m),
        MethodSpec::new("GCM (PLASSO)", TestKind::Gcm, PostLasso, PostLasso, m),
        MethodSpec::new("dCRT-hat (PLASSO)", TestKind::Dcrt, PostLasso, PostLasso, m),
        MethodSpec::new("Maxway CRT", TestKind::Maxway, PostLasso, PostLasso, m),
        MethodSpec::new("GCM (marginal)", TestKind::Gcm, Intercept, Intercept, m),
        MethodSpec::new("GCM (oracle)", TestKind::Gcm, Oracle, Oracle, m),
    ]
}

/// dCRT-hat with a lasso fit for `X` and either an intercept-only or a lasso
/// fit for `Y`.
pub fn shrinkage_roster(m: usize) -> Vec<MethodSpec> {
    use MeanLearner::*;
    vec![
        MethodSpec::new("dCRT-hat (LASSO x, intercept y)", TestKind::Dcrt, Lasso, Intercept, m),
        MethodSpec::new("dCRT-hat (LASSO x, LASSO y)", TestKind::Dcrt, Lasso, Lasso, m),
    ]
}

/// Looks up a roster entry by display name or by a short alias such as
/// `gcm-lasso`.
pub fn method_by_name(name: &str, m: usize) -> Option<MethodSpec> {
    let alias = match name.to_ascii_lowercase().as_str() {
        "gcm-lasso" => "GCM (LASSO)",
        "dcrt-lasso" => "dCRT-hat (LASSO)",
        "gcm-plasso" => "GCM (PLASSO)",
        "dcrt-plasso" => "dCRT-hat (PLASSO)",
        "maxway" => "Maxway CRT",
        "gcm-marginal" => "GCM (marginal)",
        "gcm-oracle" => "GCM (oracle)",
        _ => name,
    }
    .to_string();
    standard_roster(m)
        .into_iter()
        .chain(shrinkage_roster(m))
        .find(|s| s.name == alias)
}

/// Supervised data or labeled data with extra unlabeled `(x, Z)` rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    #[default]
    Supervised,
    SemiSupervised,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Supervised => "supervised",
            Setting::SemiSupervised => "semi_supervised",
        }
    }
}

/// Whether any method in the roster needs the full covariate matrix.
pub fn roster_uses_design(methods: &[MethodSpec]) -> bool {
    methods.iter().any(MethodSpec::uses_design)
}

/// Result of one method on one replicate.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub metrics: Option<ErrorMetrics>,
    pub degenerate: usize,
}

/// Shared lasso fits for one replicate: the cross-validated lasso and its
/// post-lasso refit.
struct LassoPair {
    lasso: MeanModel,
    post: MeanModel,
}

/// Everything the methods of one replicate share.
pub(crate) struct Replicate<'a> {
    pub truth: &'a GroundTruth,
    pub labeled: &'a Dataset,
    /// `(x, Z)` rows used to learn `X | Z` (pooled in the semi-supervised setting).
    pub x_rows: (&'a [f64], &'a DMatrix<f64>),
    pub semi: Option<&'a SemiSupervisedData>,
    pub alpha: f64,
    pub side: Sidedness,
    pub folds: usize,
    pub lasso: &'a LassoConfig,
    /// Only the statistic is needed: resampling tests run with a single resample.
    pub statistic_only: bool,
}

fn x_family(truth: &GroundTruth) -> Family {
    truth.x_family
}

fn fit_pair<R: Rng + ?Sized>(
    z: &DMatrix<f64>,
    target: &[f64],
    family: Family,
    folds: usize,
    cfg: &LassoConfig,
    rng: &mut R,
) -> Result<LassoPair> {
    let cv = fit_lasso_cv(z, target, family, folds, cfg, rng)?;
    let post = fit_post_lasso_from(&cv, z, target)?;
    Ok(LassoPair { lasso: cv.model, post })
}

enum Fitted<'a> {
    Model(&'a MeanModel),
    Owned(MeanModel),
    Oracle(OracleMean),
}

impl Fitted<'_> {
    fn as_mean(&self) -> &dyn ConditionalMean {
        match self {
            Fitted::Model(m) => *m,
            Fitted::Owned(m) => m,
            Fitted::Oracle(o) => o,
        }
    }
}

fn pick<'a>(
    learner: MeanLearner,
    pair: &'a Option<std::result::Result<LassoPair, String>>,
    which: Which,
    rep: &Replicate,
) -> Result<Fitted<'a>> {
    match learner {
        MeanLearner::Lasso | MeanLearner::PostLasso => match pair {
            Some(Ok(p)) => Ok(Fitted::Model(if learner == MeanLearner::Lasso {
                &p.lasso
            } else {
                &p.post
            })),
            Some(Err(msg)) => Err(Error::ConvergenceFailure {
                iterations: 0,
                message: msg.clone(),
            }),
            None => unreachable!("lasso fit requested but not computed"),
        },
        MeanLearner::Intercept => {
            let p = rep.labeled.p();
            let m = match which {
                Which::X => fit_intercept_only(rep.x_rows.0, x_family(rep.truth), p)?,
                Which::Y => fit_intercept_only(rep.labeled.y(), rep.labeled.family(), p)?,
            };
            Ok(Fitted::Owned(m))
        }
        MeanLearner::Oracle => Ok(Fitted::Oracle(fit_oracle(rep.truth, which))),
    }
}

fn variance_for(choice: VarianceChoice, mx: &dyn ConditionalMean, rep: &Replicate) -> VarianceEstimator {
    variance_estimator(choice, x_family(rep.truth), rep.x_rows.0, rep.x_rows.1, mx)
}

fn variance_estimator(
    choice: VarianceChoice,
    family: Family,
    x: &[f64],
    z: &DMatrix<f64>,
    mx: &dyn ConditionalMean,
) -> VarianceEstimator {
    match (choice, family) {
        (VarianceChoice::ResidualSquared, _) => VarianceEstimator::residual_squared(),
        (_, Family::Binomial) => VarianceEstimator::bernoulli(),
        (VarianceChoice::Truth, Family::Gaussian) => VarianceEstimator::constant(1.0),
        (VarianceChoice::MeanSquaredResidual, Family::Gaussian) => {
            let fit = mx.predict(z);
            let ms = x.iter().zip(&fit).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
            VarianceEstimator::constant(ms.max(crate::learners::VARIANCE_FLOOR))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn dispatch<R: Rng + ?Sized>(
    test: TestKind,
    data: &Dataset,
    law: &CondLawX,
    my: &dyn ConditionalMean,
    m: usize,
    alpha: f64,
    side: Sidedness,
    rng: &mut R,
) -> Result<TestResult> {
    match test {
        TestKind::Gcm => gcm_test(data, law.mean, my, alpha, side),
        TestKind::Dcrt => dcrt_hat(data, law, my, m, alpha, side, rng),
        TestKind::Ndcrt => ndcrt_hat(data, law, my, m, alpha, side, rng),
        TestKind::Mx2 => mx2_f_test(data, law, my, alpha, side),
        TestKind::Maxway => Err(Error::Unsupported("Maxway CRT is not a plug-in test".into())),
    }
}

fn sampler_of(family: Family) -> Sampler {
    match family {
        Family::Gaussian => Sampler::Gaussian,
        Family::Binomial => Sampler::Bernoulli,
    }
}

fn sampler_for(truth: &GroundTruth) -> Sampler {
    sampler_of(x_family(truth))
}

fn outcome(r: TestResult, metrics: Option<ErrorMetrics>) -> Outcome {
    let degenerate = r
        .diagnostics
        .get("degenerate_resamples")
        .and_then(|v| v.as_u64())
        .unwrap_or(0) as usize;
    Outcome {
        statistic: r.statistic,
        p_value: r.p_value,
        reject: r.reject,
        metrics,
        degenerate,
    }
}

/// Runs every method of the roster on one replicate. Learner fits are shared
/// across methods; a failed fit fails only the methods that use it.
pub(crate) fn run_methods<R: Rng + ?Sized>(
    methods: &[MethodSpec],
    rep: &Replicate,
    rng: &mut R,
) -> Vec<Result<Outcome>> {
    let needs = |which: Which| {
        methods.iter().any(|m| {
            m.test != TestKind::Maxway && {
                let l = if which == Which::X { m.x_learner } else { m.y_learner };
                matches!(l, MeanLearner::Lasso | MeanLearner::PostLasso)
            }
        })
    };
    let pair_x = needs(Which::X).then(|| {
        fit_pair(
            rep.x_rows.1,
            rep.x_rows.0,
            x_family(rep.truth),
            rep.folds,
            rep.lasso,
            rng,
        )
        .map_err(|e| e.to_string())
    });
    let pair_y = needs(Which::Y).then(|| {
        fit_pair(
            rep.labeled.z(),
            rep.labeled.y(),
            rep.labeled.family(),
            rep.folds,
            rep.lasso,
            rng,
        )
        .map_err(|e| e.to_string())
    });
    methods
        .iter()
        .map(|spec| run_one(spec, rep, &pair_x, &pair_y, rng))
        .collect()
}

fn run_one<R: Rng + ?Sized>(
    spec: &MethodSpec,
    rep: &Replicate,
    pair_x: &Option<std::result::Result<LassoPair, String>>,
    pair_y: &Option<std::result::Result<LassoPair, String>>,
    rng: &mut R,
) -> Result<Outcome> {
    let m = if rep.statistic_only { 1 } else { spec.m };
    if spec.test == TestKind::Maxway {
        let opts = MaxwayOptions {
            folds: rep.folds,
            lasso: rep.lasso.clone(),
            side: rep.side,
        };
        let r = match rep.semi {
            Some(semi) => maxway_crt(semi, m, rep.alpha, &opts, rng)?,
            None => maxway_crt_supervised(rep.labeled, m, rep.alpha, &opts, rng)?,
        };
        return Ok(outcome(r, None));
    }
    let fx = pick(spec.x_learner, pair_x, Which::X, rep)?;
    let fy = pick(spec.y_learner, pair_y, Which::Y, rep)?;
    let (mx, my) = (fx.as_mean(), fy.as_mean());
    let law = CondLawX::new(mx, variance_for(spec.variance, mx, rep), sampler_for(rep.truth));
    let data = rep.labeled;
    let r = dispatch(spec.test, data, &law, my, m, rep.alpha, rep.side, rng)?;
    let metrics = error_metrics(data, rep.truth, mx, my, &law).ok();
    Ok(outcome(r, metrics))
}

/// Applies one roster method to observed data. Both means are fit on all
/// rows; oracle learners need a known model and are rejected.
pub fn apply_method<R: Rng + ?Sized>(
    spec: &MethodSpec,
    data: &Dataset,
    x_family: Family,
    alpha: f64,
    side: Sidedness,
    folds: usize,
    rng: &mut R,
) -> Result<TestResult> {
    let lasso = LassoConfig::default();
    if spec.test == TestKind::Maxway {
        let opts = MaxwayOptions { folds, lasso, side };
        return maxway_crt_supervised(data, spec.m, alpha, &opts, rng);
    }
    let mut fit = |learner: MeanLearner, target: &[f64], family: Family| -> Result<MeanModel> {
        match learner {
            MeanLearner::Lasso => Ok(fit_lasso_cv(data.z(), target, family, folds, &lasso, rng)?.model),
            MeanLearner::PostLasso => {
                let cv = fit_lasso_cv(data.z(), target, family, folds, &lasso, rng)?;
                fit_post_lasso_from(&cv, data.z(), target)
            }
            MeanLearner::Intercept => fit_intercept_only(target, family, data.p()),
            MeanLearner::Oracle => Err(Error::Unsupported(format!(
                "{} needs the true conditional means and cannot run on observed data",
                spec.name
            ))),
        }
    };
    let mx = fit(spec.x_learner, data.x(), x_family)?;
    let my = fit(spec.y_learner, data.y(), data.family())?;
    let law = CondLawX::new(
        &mx,
        variance_estimator(spec.variance, x_family, data.x(), data.z(), &mx),
        sampler_of(x_family),
    );
    Ok(dispatch(spec.test, data, &law, &my, spec.m, alpha, side, rng)?.with("method_name", spec.name.as_str()))
}
