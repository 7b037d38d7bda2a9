//! Scenario generators, population SNR and the Monte-Carlo harness.

pub mod dist;
pub mod experiment;
pub mod scenario;
pub mod snr;

pub use dist::ErrorDist;
pub use experiment::{
    calibrate_jump, hausdorff, run_cell, run_experiment, summarize, Cell, ExperimentConfig, ExperimentKind,
    ExperimentRecord, ReplicateOutcome, WbsSettings,
};
pub use scenario::{generate, CoefSpec, Covariance, Scenario, ScenarioSpec};
pub use snr::{population_sigma2, signal_vector, snr, snr_curve, SnrCurve};
