//! Population signal-to-noise ratio of the weighted score and the oracle
//! signal vector of a single-change scenario.

use serde::{Deserialize, Serialize};

use super::dist::ErrorDist;
use super::scenario::ScenarioSpec;
use crate::error::{Error, Result};
use crate::model::validate_taus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrCurve {
    pub alphas: Vec<f64>,
    pub values: Vec<f64>,
    pub error_dist: String,
    pub taus: Vec<f64>,
}

impl SnrCurve {
    /// Grid weight with the largest SNR (first on ties).
    pub fn argmax(&self) -> f64 {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        self.alphas[best]
    }
}

/// Population `sigma^2(alpha, tau)` of the score multiplier.
pub fn population_sigma2(alpha: f64, taus: &[f64], dist: &ErrorDist) -> Result<f64> {
    let k = taus.len() as f64;
    let mut var_e = 0.0;
    for &t1 in taus {
        for &t2 in taus {
            var_e += t1.min(t2) - t1 * t2;
        }
    }
    var_e /= k * k;
    if alpha == 0.0 {
        return Ok(var_e);
    }
    let undefined = || Error::SnrUndefined(format!("{} has no finite variance; use alpha=0", dist.label()));
    let var_eps = dist.variance().ok_or_else(undefined)?;
    let mut cov = 0.0;
    for &t in taus {
        cov += dist.partial_moment(dist.quantile(t)).ok_or_else(undefined)?;
    }
    cov /= k;
    Ok((1.0 - alpha).powi(2) * var_e + alpha * alpha * var_eps - 2.0 * alpha * (1.0 - alpha) * cov)
}

/// `SNR(alpha, tau) = ((1 - alpha) mean_k f(b_k) + alpha) / sigma(alpha, tau)`
/// with `b_k` the `tau_k` quantile of the error law.
pub fn snr(alpha: f64, taus: &[f64], dist: &ErrorDist) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    validate_taus(taus)?;
    dist.validate()?;
    if matches!(dist, ErrorDist::Normal { sd } if *sd == 0.0) {
        return Err(Error::SnrUndefined("degenerate error law".into()));
    }
    let k = taus.len() as f64;
    let density: f64 = taus.iter().map(|&t| dist.pdf(dist.quantile(t))).sum::<f64>() / k;
    let num = (1.0 - alpha) * density + alpha;
    Ok(num / population_sigma2(alpha, taus, dist)?.sqrt())
}

pub fn snr_curve(alphas: &[f64], taus: &[f64], dist: &ErrorDist) -> Result<SnrCurve> {
    let values = alphas.iter().map(|&a| snr(a, taus, dist)).collect::<Result<Vec<_>>>()?;
    Ok(SnrCurve { alphas: alphas.to_vec(), values, error_dist: dist.label(), taus: taus.to_vec() })
}

/// `D_j = SNR |t1 (1 - t1) (Sigma (beta1 - beta2))_j|` for a single-change scenario.
pub fn signal_vector(spec: &ScenarioSpec, alpha: f64, taus: &[f64]) -> Result<Vec<f64>> {
    if spec.changepoints.len() != 1 {
        return Err(Error::config("signal vector needs exactly one change point"));
    }
    let t1 = spec.changepoints[0];
    let betas = spec.segment_betas();
    let diff: Vec<f64> = betas[0].iter().zip(&betas[1]).map(|(a, b)| a - b).collect();
    let sigma = spec.covariance.matrix(spec.p);
    let s = snr(alpha, taus, &spec.error)?;
    Ok((0..spec.p)
        .map(|j| {
            let v: f64 = (0..spec.p).map(|k| sigma[(j, k)] * diff[k]).sum();
            s * (t1 * (1.0 - t1) * v).abs()
        })
        .collect())
}
