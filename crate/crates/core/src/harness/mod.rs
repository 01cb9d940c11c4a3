//! Monte Carlo study harness: calibration of the design scales, null and
//! power grids over a method roster, and the smaller demonstrations.
//!
//! Every replicate draws from its own seed substream, so results depend only
//! on the configuration and the master seed, not on the number of workers.

pub mod calibrate;
pub mod demos;
pub mod grid;
pub mod methods;

pub use calibrate::{calibrate_nu_max, calibrate_theta_max, Calibration, CalibrationCache, CalibrationContext};
pub use demos::{
    marginal_association_profile, mse_shared_vs_total, negative_result_demo, negative_result_limit, DesignKind,
    MarginalDesign, MseComparison, NegativeResultRow,
};
pub use grid::{
    run_grid, run_null_grid, run_point, run_power_grid, run_power_point, standard_cells, write_results_csv, Cell,
    GridKind, GridResult, GridSpec, SimConfig,
};
pub use methods::{
    apply_method, method_by_name, shrinkage_roster, standard_roster, MeanLearner, MethodSpec, Setting, TestKind,
    VarianceChoice,
};
