//! Pooled weighted variance of the score multipliers, estimated from two
//! refits on either side of a candidate change point.

use std::ops::Range;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, TestConfig, WeightedLossSpec};
use crate::solver::{fit_weighted_lasso_warm, select_lambda, WeightedFit};

/// Smallest variance used for standardization.
pub const SIGMA2_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub sigma2: f64,
    pub sigma2_minus: f64,
    pub sigma2_plus: f64,
    pub n_minus: usize,
    pub n_plus: usize,
    pub t_hat_used: f64,
    /// Both segment fits certified.
    pub converged: bool,
    /// `sigma2` fell below [`SIGMA2_FLOOR`].
    pub floored: bool,
}

impl VarianceEstimate {
    /// Standard deviation used to standardize the CUSUM (floored).
    pub fn sigma(&self) -> f64 {
        self.sigma2.max(SIGMA2_FLOOR).sqrt()
    }
}

/// 0-based row ranges of the left and right segments.
///
/// Left keeps rows `i <= n h t` and right keeps `i >= t n + (1 - h)(1 - t) n`
/// (1-based `i`).
pub fn segments(n: usize, t_hat: f64, h: f64) -> Result<(Range<usize>, Range<usize>)> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::config(format!("h must lie in (0, 1), got {h}")));
    }
    if !(t_hat > 0.0 && t_hat < 1.0) {
        return Err(Error::input(format!("t_hat must lie in (0, 1), got {t_hat}")));
    }
    let nf = n as f64;
    let left_end = ((nf * h * t_hat) + 1e-9).floor().min(nf) as usize;
    let right_start = ((t_hat * nf + (1.0 - h) * (1.0 - t_hat) * nf) - 1e-9).ceil().max(1.0) as usize;
    if left_end < 1 {
        return Err(Error::EmptySegment(format!(
            "left segment is empty (n h t_hat = {:.3}); increase h or n",
            nf * h * t_hat
        )));
    }
    if right_start > n {
        return Err(Error::EmptySegment(format!(
            "right segment is empty (starts at {right_start} > n = {n}); increase h or n"
        )));
    }
    Ok((0..left_end, right_start - 1..n))
}

fn multiplier_parts(
    data: &Dataset,
    spec: &WeightedLossSpec,
    fit: &WeightedFit,
    rows: Range<usize>,
) -> (Vec<f64>, Vec<f64>) {
    let beta = DVector::from_column_slice(&fit.beta_hat);
    let k = spec.k() as f64;
    let mut eps = Vec::with_capacity(rows.len());
    let mut e = Vec::with_capacity(rows.len());
    for i in rows {
        let r = data.y()[i] - (data.x().row(i) * &beta)[0];
        let ind: f64 = spec.taus.iter().zip(&fit.b_hat).map(|(&tau, &b)| if r <= b { 1.0 - tau } else { -tau }).sum();
        eps.push(r);
        e.push(ind / k);
    }
    (eps, e)
}

/// Residuals `eps_i` and averaged quantile indicators `e_i` on both
/// segments, left rows first. `fit1` and `fit2` are the segment fits.
pub fn residuals(
    data: &Dataset,
    spec: &WeightedLossSpec,
    fit1: &WeightedFit,
    fit2: &WeightedFit,
    t_hat: f64,
    h: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    for fit in [fit1, fit2] {
        if fit.beta_hat.len() != data.p() || fit.b_hat.len() != spec.k() {
            return Err(Error::dims("segment fit does not match the data or quantile levels"));
        }
    }
    let (left, right) = segments(data.n(), t_hat, h)?;
    let (mut eps, mut e) = multiplier_parts(data, spec, fit1, left);
    let (eps2, e2) = multiplier_parts(data, spec, fit2, right);
    eps.extend(eps2);
    e.extend(e2);
    Ok((eps, e))
}

fn segment_sigma2(alpha: f64, eps: &[f64], e: &[f64]) -> f64 {
    let s: f64 = eps.iter().zip(e).map(|(r, u)| ((1.0 - alpha) * u - alpha * r).powi(2)).sum();
    s / eps.len() as f64
}

/// `sigma^2(alpha, tau)` from refits on both segments around `t_hat`.
pub fn estimate_sigma2(
    data: &Dataset,
    spec: &WeightedLossSpec,
    cfg: &TestConfig,
    t_hat: f64,
) -> Result<VarianceEstimate> {
    estimate_sigma2_warm(data, spec, cfg, t_hat, None)
}

/// As [`estimate_sigma2`], warm-starting both refits from `warm`.
pub fn estimate_sigma2_warm(
    data: &Dataset,
    spec: &WeightedLossSpec,
    cfg: &TestConfig,
    t_hat: f64,
    warm: Option<&WeightedFit>,
) -> Result<VarianceEstimate> {
    let (left, right) = segments(data.n(), t_hat, cfg.h)?;
    let refit = |rows: &Range<usize>| -> Result<WeightedFit> {
        let seg = data.window(rows.start, rows.end)?;
        let lambda = select_lambda(&seg, cfg);
        fit_weighted_lasso_warm(&seg, spec, lambda, &cfg.solver, warm)
    };
    let (fit1, fit2) = rayon::join(|| refit(&left), || refit(&right));
    let (fit1, fit2) = (fit1?, fit2?);
    let (eps1, e1) = multiplier_parts(data, spec, &fit1, left.clone());
    let (eps2, e2) = multiplier_parts(data, spec, &fit2, right.clone());
    let minus = segment_sigma2(spec.alpha, &eps1, &e1);
    let plus = segment_sigma2(spec.alpha, &eps2, &e2);
    let sigma2 = t_hat * minus + (1.0 - t_hat) * plus;
    Ok(VarianceEstimate {
        sigma2,
        sigma2_minus: minus,
        sigma2_plus: plus,
        n_minus: left.len(),
        n_plus: right.len(),
        t_hat_used: t_hat,
        converged: fit1.converged && fit2.converged,
        floored: !(sigma2 >= SIGMA2_FLOOR),
    })
}
