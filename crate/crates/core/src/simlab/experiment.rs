//! Monte-Carlo experiment harness.
//!
//! Replicate `r` of cell `c` derives all of its randomness from
//! `derive_seed(seed, EXPERIMENT, c << 32 | r)`, so tables do not depend on
//! how replicates are scheduled.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{generate, ScenarioSpec};
use super::snr::signal_vector;
use crate::bootstrap::run_adaptive_test;
use crate::error::{Error, Result};
use crate::model::{s0_norm, TestConfig};
use crate::rng::{derive_seed, domain};
use crate::wbs::{generate_intervals, wbs_detect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Size,
    Power,
    Estimation,
    Multi,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Size => "size",
            ExperimentKind::Power => "power",
            ExperimentKind::Estimation => "estimation",
            ExperimentKind::Multi => "multi",
        }
    }
}

/// Interval settings for multiple change-point cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WbsSettings {
    pub v: usize,
    /// Defaults to `30 / n`.
    pub v0: Option<f64>,
    /// Defaults to `2 v0`.
    pub v1: Option<f64>,
}

impl Default for WbsSettings {
    fn default() -> Self {
        Self { v: 500, v0: None, v1: None }
    }
}

impl WbsSettings {
    pub fn resolve(&self, n: usize) -> (f64, f64) {
        let v0 = self.v0.unwrap_or(30.0 / n as f64);
        (v0, self.v1.unwrap_or(2.0 * v0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub name: String,
    pub scenario: ScenarioSpec,
    /// When set, the jump magnitude is replaced so that
    /// `max_alpha |D|_(s0,2) = signal_factor * sqrt(log(p n) / n)`.
    #[serde(default)]
    pub signal_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub test: TestConfig,
    #[serde(default)]
    pub wbs: WbsSettings,
    pub cells: Vec<Cell>,
}

/// One row of a result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub cell: String,
    pub kind: String,
    pub method: String,
    /// `alpha=<w>` for an individual test, `adaptive` otherwise.
    pub test: String,
    pub metric: String,
    pub value: f64,
    pub reps: usize,
    pub failures: usize,
}

/// Per-replicate outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub alphas: Vec<f64>,
    pub individual_reject: Vec<bool>,
    pub individual_t_hat: Vec<f64>,
    pub adaptive_reject: bool,
    pub t_hat_ad: f64,
    pub changepoints: Vec<f64>,
    pub truth: Vec<f64>,
}

/// Scaled Hausdorff distance between relative location sets; `1.0` when
/// exactly one of them is empty and `0.0` when both are.
pub fn hausdorff(estimate: &[f64], truth: &[f64]) -> f64 {
    match (estimate.is_empty(), truth.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return 1.0,
        _ => {}
    }
    let directed = |a: &[f64], b: &[f64]| {
        a.iter().map(|x| b.iter().map(|y| (x - y).abs()).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
    };
    directed(estimate, truth).max(directed(truth, estimate))
}

/// Jump magnitude meeting the signal condition with the given factor.
///
/// Multi-change scenarios are calibrated on a single change at `0.5`.
pub fn calibrate_jump(spec: &ScenarioSpec, cfg: &TestConfig, factor: f64) -> Result<f64> {
    let mut unit = spec.clone();
    unit.jump.magnitude = 1.0;
    if unit.changepoints.len() != 1 {
        unit.changepoints = vec![0.5];
    }
    let s0 = cfg.s0.min(spec.p).max(1);
    let mut best: f64 = 0.0;
    for a in cfg.alphas() {
        match signal_vector(&unit, a, &cfg.taus) {
            Ok(d) => best = best.max(s0_norm(&d, s0)?),
            Err(Error::SnrUndefined(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if !(best > 0.0) {
        return Err(Error::config("jump pattern carries no signal for any weight"));
    }
    let n = spec.n as f64;
    Ok(factor * ((spec.p as f64 * n).ln() / n).sqrt() / best)
}

fn run_replicate(exp: &ExperimentConfig, spec: &ScenarioSpec, seed: u64) -> Result<ReplicateOutcome> {
    let scenario = generate(&ScenarioSpec { seed: derive_seed(seed, domain::SCENARIO, 0), ..spec.clone() })?;
    let cfg = TestConfig { seed: derive_seed(seed, domain::BOOTSTRAP, 0), ..exp.test.clone() };
    let mut out = ReplicateOutcome {
        alphas: cfg.alphas(),
        individual_reject: vec![],
        individual_t_hat: vec![],
        adaptive_reject: false,
        t_hat_ad: f64::NAN,
        changepoints: vec![],
        truth: scenario.changepoints.clone(),
    };
    if exp.kind == ExperimentKind::Multi {
        let (v0, v1) = exp.wbs.resolve(spec.n);
        let iv = generate_intervals(&cfg, exp.wbs.v, v0, v1, derive_seed(seed, domain::INTERVALS, 0))?;
        out.changepoints = wbs_detect(&scenario.data, &cfg, &iv)?.changepoints;
    } else {
        let res = run_adaptive_test(&scenario.data, &cfg)?;
        out.individual_reject = res.individual.iter().map(|r| r.reject).collect();
        out.individual_t_hat = res.individual.iter().map(|r| r.t_hat.t_hat).collect();
        out.adaptive_reject = res.reject;
        out.t_hat_ad = res.t_hat_ad.t_hat;
    }
    Ok(out)
}

/// Resolves calibrated jumps and runs every replicate of one cell.
pub fn run_cell(exp: &ExperimentConfig, index: usize) -> Result<(ScenarioSpec, Vec<Result<ReplicateOutcome>>)> {
    let cell = &exp.cells[index];
    let mut spec = cell.scenario.clone();
    spec.validate()?;
    if let Some(f) = cell.signal_factor {
        spec.jump.magnitude = calibrate_jump(&spec, &exp.test, f)?;
    }
    let outcomes = (0..exp.reps)
        .into_par_iter()
        .map(|r| {
            run_replicate(exp, &spec, derive_seed(exp.seed, domain::EXPERIMENT, ((index as u64) << 32) | r as u64))
        })
        .collect();
    Ok((spec, outcomes))
}

/// Linear-interpolation sample quantile.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize_errors(errors: &mut [f64]) -> (f64, f64) {
    errors.sort_by(f64::total_cmp);
    (quantile(errors, 0.5), quantile(errors, 0.75) - quantile(errors, 0.25))
}

/// Aggregates one cell into table rows.
pub fn summarize(exp: &ExperimentConfig, cell: &str, outcomes: &[Result<ReplicateOutcome>]) -> Vec<ExperimentRecord> {
    let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let failures = outcomes.len() - ok.len();
    let m = ok.len() as f64;
    let mut rows = Vec::new();
    let mut push = |test: String, metric: &str, value: f64| {
        rows.push(ExperimentRecord {
            cell: cell.to_string(),
            kind: exp.kind.as_str().to_string(),
            method: "tailcp".to_string(),
            test,
            metric: metric.to_string(),
            value,
            reps: outcomes.len(),
            failures,
        })
    };
    if exp.kind == ExperimentKind::Multi {
        let mut d: Vec<f64> = ok.iter().map(|o| hausdorff(&o.changepoints, &o.truth)).collect();
        let (med, iqr) = summarize_errors(&mut d);
        push("adaptive".into(), "median_hausdorff", med);
        push("adaptive".into(), "iqr_hausdorff", iqr);
        push("adaptive".into(), "empty_rate", ok.iter().filter(|o| o.changepoints.is_empty()).count() as f64 / m);
        push("adaptive".into(), "mean_count", ok.iter().map(|o| o.changepoints.len() as f64).sum::<f64>() / m);
        return rows;
    }
    let alphas = exp.test.alphas();
    for (j, a) in alphas.iter().enumerate() {
        let rate = ok.iter().filter(|o| o.individual_reject[j]).count() as f64 / m;
        push(format!("alpha={a}"), "rejection_rate", rate);
    }
    push("adaptive".into(), "rejection_rate", ok.iter().filter(|o| o.adaptive_reject).count() as f64 / m);
    let single = ok.first().map(|o| o.truth.len() == 1).unwrap_or(false);
    if exp.kind == ExperimentKind::Estimation && single {
        for (j, a) in alphas.iter().enumerate() {
            let mut e: Vec<f64> = ok.iter().map(|o| (o.individual_t_hat[j] - o.truth[0]).abs()).collect();
            let (med, iqr) = summarize_errors(&mut e);
            push(format!("alpha={a}"), "median_abs_error", med);
            push(format!("alpha={a}"), "iqr_abs_error", iqr);
        }
        let mut e: Vec<f64> = ok.iter().map(|o| (o.t_hat_ad - o.truth[0]).abs()).collect();
        let (med, iqr) = summarize_errors(&mut e);
        push("adaptive".into(), "median_abs_error", med);
        push("adaptive".into(), "iqr_abs_error", iqr);
    }
    rows
}

/// Runs every cell and returns the long-format table.
pub fn run_experiment(exp: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    if exp.reps < 1 {
        return Err(Error::config("experiment needs at least one replicate"));
    }
    if exp.cells.is_empty() {
        return Err(Error::config("experiment has no cells"));
    }
    let mut rows = Vec::new();
    for (i, cell) in exp.cells.iter().enumerate() {
        let (_, outcomes) = run_cell(exp, i)?;
        rows.extend(summarize(exp, &cell.name, &outcomes));
    }
    Ok(rows)
}
