//! Tail-adaptive change-point testing and estimation for high-dimensional
//! linear regression.
//!
//! The pipeline fits an L1-penalized weighted composite quantile /
//! least-squares regression, builds a score-based CUSUM aggregated by the
//! `(s0, 2)`-norm, calibrates it with a Gaussian multiplier bootstrap and
//! combines several loss weights into a single minimum-p-value test. Wild
//! binary segmentation on top of the adaptive test finds multiple changes.

// Index loops mirror the summation formulas in the numeric kernels, and
// negated comparisons deliberately reject NaN parameters.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod cusum;
pub mod error;
pub mod model;
pub mod rng;
pub mod simlab;
pub mod solver;
pub mod variance;
pub mod wbs;

pub use bootstrap::{
    adaptive_pvalue, bootstrap_statistic, bootstrap_variance_v2, run_adaptive_test, run_individual_test,
    AdaptiveTestResult, IndividualTestResult,
};
pub use cusum::{cusum, estimate_changepoint, max_statistic, score_series, split_grid, CusumProcess};
pub use error::{Error, Result};
pub use model::{
    check_loss, s0_norm, score, weighted_loss, ChangePointEstimate, Dataset, TestConfig, WeightedLossSpec,
};
pub use solver::{
    fit_weighted_lasso, fit_weighted_lasso_warm, lambda_max, select_lambda, Engine, SolverConfig, WeightedFit,
};
pub use variance::{estimate_sigma2, VarianceEstimate};
pub use wbs::{generate_intervals, wbs_detect, IntervalSet, MultiCpReport};
