//! Wild binary segmentation driven by the tail-adaptive test.
//!
//! Every random interval is tested once up front; the recursion then only
//! filters cached p-values by span and compares them with `gamma / V`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::run_adaptive_test;
use crate::error::{Error, Result};
use crate::model::{Dataset, TestConfig};
use crate::rng::{derive_seed, domain, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    /// Relative `(s, e)` pairs with `q0 <= s < e <= 1 - q0`.
    pub intervals: Vec<(f64, f64)>,
    pub v: usize,
    /// Minimum interval length.
    pub v0: f64,
    /// Spans of length at most `v1` are not split further.
    pub v1: f64,
}

/// Outcome of the adaptive test on one interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalTest {
    pub start: f64,
    pub end: f64,
    /// Rows `first_row..end_row` (0-based) form the window.
    pub first_row: usize,
    pub end_row: usize,
    /// `None` when the window could not be tested.
    pub p_ad: Option<f64>,
    /// Statistic of the selected weight, used to break p-value ties.
    pub statistic: Option<f64>,
    /// Absolute relative location of the window's adaptive estimate.
    pub t_hat: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NodeDecision {
    SpanTooShort,
    NoInterval,
    AboveThreshold,
    Split { t_hat: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTrace {
    pub span: (f64, f64),
    pub depth: usize,
    pub candidates: usize,
    pub best_interval: Option<usize>,
    pub p_bar: Option<f64>,
    pub decision: NodeDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiCpReport {
    /// Increasing relative locations.
    pub changepoints: Vec<f64>,
    pub per_node: Vec<NodeTrace>,
    pub threshold: f64,
    pub intervals: Vec<IntervalTest>,
}

/// Draws `v` intervals uniformly on `[q0, 1 - q0]`, redrawing those shorter
/// than `v0` (at most `100 v` draws in total).
pub fn generate_intervals(cfg: &TestConfig, v: usize, v0: f64, v1: f64, seed: u64) -> Result<IntervalSet> {
    if v < 1 {
        return Err(Error::config("number of intervals V must be at least 1"));
    }
    if !(v0 > 0.0) {
        return Err(Error::config(format!("v0 must be positive, got {v0}")));
    }
    if !(v1 >= v0) {
        return Err(Error::config(format!("v1 must be at least v0, got v1={v1}, v0={v0}")));
    }
    let (lo, hi) = (cfg.q0, 1.0 - cfg.q0);
    if v0 > hi - lo {
        return Err(Error::config(format!("v0={v0} exceeds the admissible range length {}", hi - lo)));
    }
    let mut rng = stream(seed, domain::INTERVALS, 0);
    let mut intervals = Vec::with_capacity(v);
    let mut attempts = 0;
    while intervals.len() < v {
        if attempts == 100 * v {
            return Err(Error::config(format!(
                "only {} of {v} intervals of length >= {v0} after {attempts} draws",
                intervals.len()
            )));
        }
        attempts += 1;
        let a = rng.random_range(lo..=hi);
        let b = rng.random_range(lo..=hi);
        let (s, e) = if a <= b { (a, b) } else { (b, a) };
        if e - s >= v0 {
            intervals.push((s, e));
        }
    }
    Ok(IntervalSet { intervals, v, v0, v1 })
}

/// Window rows `i` (1-based) with `s < i/n <= e`.
fn window_rows(n: usize, s: f64, e: f64) -> (usize, usize) {
    let nf = n as f64;
    let first = ((s * nf) + 1e-9).floor() as usize;
    let end = ((e * nf) + 1e-9).floor().min(nf) as usize;
    (first, end.max(first))
}

fn test_interval(data: &Dataset, cfg: &TestConfig, index: usize, s: f64, e: f64) -> IntervalTest {
    let (first_row, end_row) = window_rows(data.n(), s, e);
    let mut out =
        IntervalTest { start: s, end: e, first_row, end_row, p_ad: None, statistic: None, t_hat: None, note: None };
    let local = TestConfig { seed: derive_seed(cfg.seed, domain::INTERVAL_TEST, index as u64), ..cfg.clone() };
    let run = data.window(first_row, end_row).and_then(|w| run_adaptive_test(&w, &local));
    match run {
        Ok(res) => {
            let best = res.individual.iter().find(|r| r.alpha == res.alpha_star);
            out.p_ad = Some(res.p_ad);
            out.statistic = best.map(|r| r.statistic);
            out.t_hat = Some((first_row + res.t_hat_ad.k_hat) as f64 / data.n() as f64);
        }
        Err(err) => out.note = Some(err.to_string()),
    }
    out
}

/// Tests every interval (in parallel) and runs the recursion.
pub fn wbs_detect(data: &Dataset, cfg: &TestConfig, intervals: &IntervalSet) -> Result<MultiCpReport> {
    let mut cfg = cfg.clone();
    cfg.s0 = cfg.s0.min(data.p()).max(1);
    cfg.validate(data.p())?;
    if !(intervals.v1 >= intervals.v0) {
        return Err(Error::config("v1 must be at least v0"));
    }
    let tests: Vec<IntervalTest> =
        intervals.intervals.par_iter().enumerate().map(|(i, &(s, e))| test_interval(data, &cfg, i, s, e)).collect();
    Ok(recurse_cached(tests, &cfg, intervals))
}

/// Recursion over cached interval tests.
pub fn recurse_cached(tests: Vec<IntervalTest>, cfg: &TestConfig, intervals: &IntervalSet) -> MultiCpReport {
    let threshold = cfg.gamma / intervals.v as f64;
    let mut report = MultiCpReport { changepoints: Vec::new(), per_node: Vec::new(), threshold, intervals: tests };
    let mut stack = vec![(cfg.q0, 1.0 - cfg.q0, 0usize)];
    while let Some((s, e, depth)) = stack.pop() {
        let mut node = NodeTrace {
            span: (s, e),
            depth,
            candidates: 0,
            best_interval: None,
            p_bar: None,
            decision: NodeDecision::SpanTooShort,
        };
        if e - s <= intervals.v1 {
            report.per_node.push(node);
            continue;
        }
        let mut best: Option<(usize, f64, f64)> = None;
        for (i, t) in report.intervals.iter().enumerate() {
            if t.start < s || t.end > e || t.end - t.start < intervals.v0 {
                continue;
            }
            let (Some(p), Some(stat)) = (t.p_ad, t.statistic) else { continue };
            node.candidates += 1;
            // ties: larger statistic, then earlier interval
            let better = match best {
                None => true,
                Some((_, bp, bs)) => p < bp || (p == bp && stat > bs),
            };
            if better {
                best = Some((i, p, stat));
            }
        }
        match best {
            None => node.decision = NodeDecision::NoInterval,
            Some((i, p, _)) => {
                node.best_interval = Some(i);
                node.p_bar = Some(p);
                if p >= threshold {
                    node.decision = NodeDecision::AboveThreshold;
                } else {
                    let t = report.intervals[i].t_hat.expect("tested interval has an estimate");
                    node.decision = NodeDecision::Split { t_hat: t };
                    report.changepoints.push(t);
                    // right first so the left span is processed next
                    stack.push((t, e, depth + 1));
                    stack.push((s, t, depth + 1));
                }
            }
        }
        report.per_node.push(node);
    }
    report.changepoints.sort_by(f64::total_cmp);
    report.changepoints.dedup();
    report
}
