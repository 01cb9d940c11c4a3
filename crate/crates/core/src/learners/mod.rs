//! Estimators of the conditional means `E[X|Z]`, `E[Y|Z]` and of `Var[X|Z]`.

pub mod kernel;
pub mod lasso;
pub mod refit;
pub mod variance;

use nalgebra::DMatrix;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::Result;
use crate::model::{true_conditional_means, Family, GroundTruth};
use crate::stats::logistic;

pub use kernel::{fit_kernel_ridge_sobolev, KernelRidgeModel};
pub use lasso::{fit_lasso_cv, fit_lasso_fixed, LassoConfig, LassoCv};
pub use refit::{fit_post_lasso, fit_post_lasso_from, fit_refit_on, PostLasso};
pub use variance::{variance_of_x_given_z, VarianceEstimator, VarianceKind, VARIANCE_FLOOR};

/// Predictions are kept inside `[PROB_CLIP, 1 - PROB_CLIP]` for binomial models.
pub const PROB_CLIP: f64 = 1e-6;

/// Anything that maps covariate rows to a fitted conditional mean.
pub trait ConditionalMean: Send + Sync {
    fn predict(&self, z: &DMatrix<f64>) -> Vec<f64>;
}

/// A fitted generalized linear conditional mean.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanModel {
    intercept: f64,
    coefficients: Vec<f64>,
    family: Family,
    active_set: Vec<usize>,
    /// Columns dropped from a refit because they were collinear with earlier ones.
    dropped: Vec<usize>,
}

impl MeanModel {
    pub fn from_parts(intercept: f64, coefficients: Vec<f64>, family: Family) -> MeanModel {
        let active_set = coefficients
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(j, _)| j)
            .collect();
        MeanModel {
            intercept,
            coefficients,
            family,
            active_set,
            dropped: Vec::new(),
        }
    }

    pub(crate) fn with_dropped(mut self, dropped: Vec<usize>) -> Self {
        self.dropped = dropped;
        self
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn active_set(&self) -> &[usize] {
        &self.active_set
    }

    pub fn dropped_columns(&self) -> &[usize] {
        &self.dropped
    }

    /// Linear predictor `intercept + Z coef`.
    pub fn predict_linear(&self, z: &DMatrix<f64>) -> Vec<f64> {
        let n = z.nrows();
        let mut eta = vec![self.intercept; n];
        let data = z.as_slice();
        for &j in &self.active_set {
            let b = self.coefficients[j];
            for (e, &v) in eta.iter_mut().zip(&data[j * n..(j + 1) * n]) {
                *e += b * v;
            }
        }
        eta
    }

    /// Conditional mean on the response scale.
    pub fn predict_matrix(&self, z: &DMatrix<f64>) -> Vec<f64> {
        let eta = self.predict_linear(z);
        match self.family {
            Family::Gaussian => eta,
            Family::Binomial => eta
                .into_iter()
                .map(|e| logistic(e).clamp(PROB_CLIP, 1.0 - PROB_CLIP))
                .collect(),
        }
    }
}

impl ConditionalMean for MeanModel {
    fn predict(&self, z: &DMatrix<f64>) -> Vec<f64> {
        self.predict_matrix(z)
    }
}

#[derive(Serialize)]
struct SparseEntry {
    index: usize,
    value: f64,
}

impl Serialize for MeanModel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let coefs: Vec<SparseEntry> = self
            .active_set
            .iter()
            .map(|&j| SparseEntry {
                index: j,
                value: self.coefficients[j],
            })
            .collect();
        let mut st = s.serialize_struct("MeanModel", 5)?;
        st.serialize_field("intercept", &self.intercept)?;
        st.serialize_field("coefficients", &coefs)?;
        st.serialize_field("p", &self.coefficients.len())?;
        st.serialize_field("family", &self.family)?;
        st.serialize_field("dropped_columns", &self.dropped)?;
        st.end()
    }
}

/// `(prediction, intercept on the link scale)` of the intercept-only fit.
pub(crate) fn intercept_value(target: &[f64], family: Family) -> (f64, f64) {
    let m = target.iter().sum::<f64>() / target.len() as f64;
    match family {
        Family::Gaussian => (m, m),
        Family::Binomial => {
            let pr = m.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            (pr, (pr / (1.0 - pr)).ln())
        }
    }
}

/// Intercept-only model: the sample mean (or clipped sample proportion).
pub fn fit_intercept_only(target: &[f64], family: Family, p: usize) -> Result<MeanModel> {
    if target.is_empty() {
        return Err(crate::Error::InvalidInput("empty target".into()));
    }
    if !target.iter().all(|v| v.is_finite()) {
        return Err(crate::Error::InvalidInput("non-finite target".into()));
    }
    let (_, b0) = intercept_value(target, family);
    Ok(MeanModel::from_parts(b0, vec![0.0; p], family))
}

/// Which conditional mean an oracle learner reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    X,
    Y,
}

/// The true conditional mean of a simulation model.
#[derive(Clone, Debug)]
pub struct OracleMean {
    truth: GroundTruth,
    which: Which,
}

impl OracleMean {
    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }
}

/// Oracle learner wrapping the ground-truth conditional means.
pub fn fit_oracle(truth: &GroundTruth, which: Which) -> OracleMean {
    OracleMean {
        truth: truth.clone(),
        which,
    }
}

impl ConditionalMean for OracleMean {
    fn predict(&self, z: &DMatrix<f64>) -> Vec<f64> {
        let (mx, my) = true_conditional_means(&self.truth, z).expect("oracle evaluated on a matrix of the wrong width");
        match self.which {
            Which::X => mx,
            Which::Y => my,
        }
    }
}

/// A fixed vector of fitted values, for callers that already hold predictions.
#[derive(Clone, Debug)]
pub struct FittedValues(pub Vec<f64>);

impl ConditionalMean for FittedValues {
    fn predict(&self, z: &DMatrix<f64>) -> Vec<f64> {
        assert_eq!(z.nrows(), self.0.len(), "fitted values length mismatch");
        self.0.clone()
    }
}
