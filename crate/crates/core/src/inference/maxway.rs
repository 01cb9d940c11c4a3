//! A simplified Maxway CRT: the law of `X | Z` is learned on unlabeled data
//! and the distilled CRT is run on the labeled rows.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{dcrt_hat, CondLawX, Sampler, Sidedness, TestResult};
use crate::error::{Error, Result};
use crate::learners::{fit_post_lasso, LassoConfig, VarianceEstimator};
use crate::model::{Dataset, Family, SemiSupervisedData};

/// Tuning shared by both Maxway variants.
#[derive(Clone, Debug)]
pub struct MaxwayOptions {
    pub folds: usize,
    pub lasso: LassoConfig,
    pub side: Sidedness,
}

impl Default for MaxwayOptions {
    fn default() -> Self {
        MaxwayOptions {
            folds: 5,
            lasso: LassoConfig::default(),
            side: Sidedness::Greater,
        }
    }
}

/// Post-lasso for `X | Z` on the unlabeled rows, a constant variance equal to
/// the unlabeled residual sum of squares over its residual degrees of freedom,
/// post-lasso for `Y | Z` on the labeled rows, then `dcrt_hat` on the labeled
/// rows.
pub fn maxway_crt<R: Rng + ?Sized>(
    semi: &SemiSupervisedData,
    m: usize,
    alpha: f64,
    opts: &MaxwayOptions,
    rng: &mut R,
) -> Result<TestResult> {
    let labeled = semi.labeled();
    let n_u = semi.unlabeled_x().len();
    if labeled.n() == 0 || n_u == 0 {
        return Err(Error::InvalidInput(
            "Maxway CRT needs labeled and unlabeled rows".into(),
        ));
    }
    let fx = fit_post_lasso(
        semi.unlabeled_z(),
        semi.unlabeled_x(),
        Family::Gaussian,
        opts.folds,
        &opts.lasso,
        rng,
    )?;
    let fitted_u = fx.model.predict_matrix(semi.unlabeled_z());
    let rss: f64 = semi
        .unlabeled_x()
        .iter()
        .zip(&fitted_u)
        .map(|(x, m)| (x - m) * (x - m))
        .sum();
    // The variance is used on other rows, so correct for the refit's degrees of freedom.
    let dof = n_u.saturating_sub(fx.model.active_set().len() + 1).max(1);
    let v = (rss / dof as f64).max(crate::learners::VARIANCE_FLOOR);
    let fy = fit_post_lasso(labeled.z(), labeled.y(), labeled.family(), opts.folds, &opts.lasso, rng)?;
    let law = CondLawX::new(&fx.model, VarianceEstimator::constant(v), Sampler::Gaussian);
    let mut r = dcrt_hat(labeled, &law, &fy.model, m, alpha, opts.side, rng)?;
    r.method = "maxway_crt".into();
    Ok(r.with("unlabeled_variance", v)
        .with("n_labeled", labeled.n())
        .with("n_unlabeled", n_u))
}

/// Supervised Maxway: a random half of the rows plays the unlabeled part with
/// its responses discarded.
pub fn maxway_crt_supervised<R: Rng + ?Sized>(
    data: &Dataset,
    m: usize,
    alpha: f64,
    opts: &MaxwayOptions,
    rng: &mut R,
) -> Result<TestResult> {
    if data.n() < 4 {
        return Err(Error::InvalidInput(
            "supervised Maxway CRT needs at least 4 rows".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..data.n()).collect();
    idx.shuffle(rng);
    let half = data.n() / 2;
    let unl = data.subset(&idx[..half]);
    let lab = data.subset(&idx[half..]);
    let semi = SemiSupervisedData::new(lab, unl.x().to_vec(), unl.z().clone())?;
    maxway_crt(&semi, m, alpha, opts, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_dataset, generate_semi_supervised, GroundTruth};
    use crate::rng::seeded;

    #[test]
    fn deterministic_given_seed() {
        let truth = GroundTruth::sparse(20, 3, 0.5, 0.0, 0.4, Family::Gaussian).unwrap();
        let d = generate_dataset(&truth, 120, &mut seeded(3)).unwrap();
        let o = MaxwayOptions::default();
        let a = maxway_crt_supervised(&d, 99, 0.05, &o, &mut seeded(9)).unwrap();
        let b = maxway_crt_supervised(&d, 99, 0.05, &o, &mut seeded(9)).unwrap();
        assert_eq!(a.statistic.to_bits(), b.statistic.to_bits());
        assert_eq!(a.p_value, b.p_value);
        assert_eq!(a.diagnostics.get("n_labeled").unwrap().as_u64(), Some(60));
    }

    #[test]
    fn semi_supervised_runs_on_labeled_rows() {
        let truth = GroundTruth::sparse(15, 3, 0.5, 0.0, 0.4, Family::Gaussian).unwrap();
        let semi = generate_semi_supervised(&truth, 80, 200, false, &mut seeded(4)).unwrap();
        let r = maxway_crt(&semi, 49, 0.05, &MaxwayOptions::default(), &mut seeded(1)).unwrap();
        assert_eq!(r.method, "maxway_crt");
        assert!(r.p_value >= 1.0 / 50.0 && r.p_value <= 1.0);
        assert!(r.diagnostic_f64("unlabeled_variance").unwrap() > 0.0);
    }
}
