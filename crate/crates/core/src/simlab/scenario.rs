//! Piecewise-linear regression scenarios with Gaussian designs.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dist::ErrorDist;
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::rng::{domain, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Covariance {
    Identity,
    /// `Sigma_jk = rho^|j-k|` for `|j-k| <= bandwidth`, zero beyond.
    Banded {
        rho: f64,
        bandwidth: usize,
    },
}

impl Default for Covariance {
    fn default() -> Self {
        Covariance::Banded { rho: 0.5, bandwidth: 10 }
    }
}

impl Covariance {
    pub fn matrix(&self, p: usize) -> DMatrix<f64> {
        match *self {
            Covariance::Identity => DMatrix::identity(p, p),
            Covariance::Banded { rho, bandwidth } => DMatrix::from_fn(p, p, |j, k| {
                let d = j.abs_diff(k);
                if d <= bandwidth {
                    rho.powi(d as i32)
                } else {
                    0.0
                }
            }),
        }
    }
}

/// `magnitude` on the first `sparsity` coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefSpec {
    pub sparsity: usize,
    pub magnitude: f64,
}

impl CoefSpec {
    pub fn vector(&self, p: usize) -> Vec<f64> {
        (0..p).map(|j| if j < self.sparsity { self.magnitude } else { 0.0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n: usize,
    pub p: usize,
    #[serde(default)]
    pub covariance: Covariance,
    pub error: ErrorDist,
    /// Coefficients of the first segment.
    pub baseline: CoefSpec,
    /// Relative change locations in `(0, 1)`, increasing.
    #[serde(default)]
    pub changepoints: Vec<f64>,
    /// Added at odd-numbered changes and removed at even-numbered ones, so
    /// the segments alternate between `baseline` and `baseline + jump`.
    pub jump: CoefSpec,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.p < 1 {
            return Err(Error::config("scenario needs n >= 1 and p >= 1"));
        }
        self.error.validate()?;
        if self.baseline.sparsity > self.p || self.jump.sparsity > self.p {
            return Err(Error::config("sparsity exceeds p"));
        }
        let cps = &self.changepoints;
        if cps.iter().any(|t| !(*t > 0.0 && *t < 1.0)) || cps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!("change points must be increasing in (0, 1): {cps:?}")));
        }
        Ok(())
    }

    /// Coefficients of each of the `changepoints.len() + 1` segments.
    pub fn segment_betas(&self) -> Vec<Vec<f64>> {
        let base = self.baseline.vector(self.p);
        let jump = self.jump.vector(self.p);
        (0..=self.changepoints.len())
            .map(|j| if j % 2 == 1 { base.iter().zip(&jump).map(|(b, d)| b + d).collect() } else { base.clone() })
            .collect()
    }

    /// First row index of each segment after the first.
    pub fn split_indices(&self) -> Vec<usize> {
        self.changepoints.iter().map(|t| (t * self.n as f64 + 1e-9).floor() as usize).collect()
    }
}

/// Generated data with its ground truth.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub data: Dataset,
    pub betas: Vec<Vec<f64>>,
    pub splits: Vec<usize>,
    /// Realized relative change locations `split / n`.
    pub changepoints: Vec<f64>,
}

/// Draws `X` rows from `N(0, Sigma)` and `y` from the segment models.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let sigma = spec.covariance.matrix(p);
    let chol = Cholesky::new(sigma).ok_or_else(|| Error::config("covariance matrix is not positive definite"))?;
    let l = chol.l();
    let mut rng = stream(spec.seed, domain::SCENARIO, 0);
    let z = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = z * l.transpose();
    let betas = spec.segment_betas();
    let splits = spec.split_indices();
    let mut y = DVector::zeros(n);
    let mut seg = 0;
    for i in 0..n {
        while seg < splits.len() && i >= splits[seg] {
            seg += 1;
        }
        let mean: f64 = (0..p).map(|j| x[(i, j)] * betas[seg][j]).sum();
        y[i] = mean + spec.error.sample(&mut rng);
    }
    let changepoints = splits.iter().map(|&k| k as f64 / n as f64).collect();
    Ok(Scenario { data: Dataset::new(x, y)?, betas, splits, changepoints })
}
