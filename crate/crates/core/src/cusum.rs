//! Score-based CUSUM process over the trimmed split grid.
//!
//! Row `r` of a process holds `(S_k - (k/n) S_n) / (sqrt(n) sigma)` for the
//! split `k = grid[r]`, where `S_k` sums the first `k` score vectors. It is
//! evaluated as `(n S_k - k S_n) / (n sqrt(n))` and then divided by `sigma`,
//! so the standardized process is the unstandardized one divided by `sigma`
//! bit for bit, and adding a constant to every score cancels inside
//! `n S_k - k S_n` before any rounding of the ratio.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{s0_norm_with, score_weight, ChangePointEstimate, Dataset, TestConfig, WeightedLossSpec};
use crate::solver::WeightedFit;

/// CUSUM coordinates at every admissible split.
#[derive(Debug, Clone, PartialEq)]
pub struct CusumProcess {
    /// Split indices `k`: the first `k` observations form the left segment.
    pub grid: Vec<usize>,
    /// `|grid| x p`, one row per split.
    pub values: DMatrix<f64>,
    pub sigma: f64,
    /// Loss weight the scores came from, when known.
    pub alpha: Option<f64>,
}

/// Integer splits `k` with `q0 <= k/n <= 1 - q0` and `1 <= k <= n - 1`.
pub fn split_grid(n: usize, q0: f64) -> Result<Vec<usize>> {
    if !(q0 > 0.0 && q0 < 0.5) {
        return Err(Error::config(format!("q0 must lie in (0, 0.5), got {q0}")));
    }
    let nf = n as f64;
    // tolerate representation error in n * q0
    let lo = ((nf * q0 - 1e-9).ceil().max(1.0)) as usize;
    let hi = ((nf * (1.0 - q0) + 1e-9).floor().min(nf - 1.0).max(0.0)) as usize;
    if n < 2 || lo > hi {
        return Err(Error::DegenerateGrid { n, q0 });
    }
    Ok((lo..=hi).collect())
}

/// Scalar score multipliers `w_i` with score_i = `w_i x_i`.
pub(crate) fn score_weights(data: &Dataset, spec: &WeightedLossSpec, fit: &WeightedFit) -> Result<Vec<f64>> {
    if fit.beta_hat.len() != data.p() {
        return Err(Error::dims(format!("fit has p={} but data has p={}", fit.beta_hat.len(), data.p())));
    }
    if fit.b_hat.len() != spec.k() {
        return Err(Error::dims(format!("fit has K={} but spec has K={}", fit.b_hat.len(), spec.k())));
    }
    let beta = nalgebra::DVector::from_column_slice(&fit.beta_hat);
    let xb = data.x() * beta;
    Ok((0..data.n()).map(|i| score_weight(data.y()[i] - xb[i], spec, &fit.b_hat)).collect())
}

/// Score vectors at the fitted parameters, one row per observation.
pub fn score_series(data: &Dataset, spec: &WeightedLossSpec, fit: &WeightedFit) -> Result<DMatrix<f64>> {
    let w = score_weights(data, spec, fit)?;
    let x = data.x();
    Ok(DMatrix::from_fn(data.n(), data.p(), |i, j| w[i] * x[(i, j)]))
}

/// Unscaled rows `n S_k - k S_n` at each split of `grid` for scores
/// `w_i x_i`, row-major (`grid.len() x p`).
pub(crate) fn weighted_cusum_rows(x: &DMatrix<f64>, w: &[f64], grid: &[usize]) -> Vec<f64> {
    let (n, p) = x.shape();
    let mut total = vec![0.0; p];
    for j in 0..p {
        let col = x.column(j);
        total[j] = (0..n).map(|i| w[i] * col[i]).sum();
    }
    let mut rows = vec![0.0; grid.len() * p];
    let mut run = vec![0.0; p];
    let mut next = 0;
    let nf = n as f64;
    for (r, &k) in grid.iter().enumerate() {
        while next < k {
            let wi = w[next];
            for j in 0..p {
                run[j] += wi * x[(next, j)];
            }
            next += 1;
        }
        let kf = k as f64;
        for j in 0..p {
            rows[r * p + j] = nf * run[j] - kf * total[j];
        }
    }
    rows
}

/// CUSUM of an arbitrary score series.
pub fn cusum(series: &DMatrix<f64>, sigma: f64, q0: f64) -> Result<CusumProcess> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::input(format!("sigma must be positive and finite, got {sigma}")));
    }
    let (n, p) = series.shape();
    let grid = split_grid(n, q0)?;
    let nf = n as f64;
    let mut total = vec![0.0; p];
    for j in 0..p {
        total[j] = series.column(j).iter().sum();
    }
    let scale = nf * nf.sqrt();
    let mut values = DMatrix::zeros(grid.len(), p);
    let mut run = vec![0.0; p];
    let mut next = 0;
    for (r, &k) in grid.iter().enumerate() {
        while next < k {
            for j in 0..p {
                run[j] += series[(next, j)];
            }
            next += 1;
        }
        let kf = k as f64;
        for j in 0..p {
            values[(r, j)] = (nf * run[j] - kf * total[j]) / scale / sigma;
        }
    }
    Ok(CusumProcess { grid, values, sigma, alpha: None })
}

/// Maximum `(s0,2)`-norm over rows of a row-major block and the split that
/// attains it (first on ties).
pub(crate) fn max_over_rows(rows: &[f64], p: usize, grid: &[usize], s0: usize, scratch: &mut Vec<f64>) -> (f64, usize) {
    let mut best = (-1.0, grid[0]);
    for (r, &k) in grid.iter().enumerate() {
        let v = s0_norm_with(rows[r * p..(r + 1) * p].iter().copied(), s0, scratch);
        if v > best.0 {
            best = (v, k);
        }
    }
    (best.0.max(0.0), best.1)
}

/// `T = max_k |C(k)|_(s0,2)` and the smallest maximizing split.
pub fn max_statistic(process: &CusumProcess, s0: usize) -> Result<(f64, usize)> {
    let p = process.values.ncols();
    if process.grid.is_empty() {
        return Err(Error::input("empty CUSUM grid"));
    }
    if s0 < 1 || s0 > p {
        return Err(Error::config(format!("s0 must lie in [1, {p}], got {s0}")));
    }
    let mut scratch = Vec::with_capacity(p);
    let mut best = (-1.0, process.grid[0]);
    for (r, &k) in process.grid.iter().enumerate() {
        let v = s0_norm_with(process.values.row(r).iter().copied(), s0, &mut scratch);
        if v > best.0 {
            best = (v, k);
        }
    }
    Ok((best.0.max(0.0), best.1))
}

/// Unstandardized maximum and its split, straight from the fitted scores.
pub(crate) fn unstandardized_max(
    data: &Dataset,
    spec: &WeightedLossSpec,
    fit: &WeightedFit,
    grid: &[usize],
    s0: usize,
) -> Result<(f64, usize)> {
    let w = score_weights(data, spec, fit)?;
    let rows = weighted_cusum_rows(data.x(), &w, grid);
    let mut scratch = Vec::with_capacity(data.p());
    let (raw, k) = max_over_rows(&rows, data.p(), grid, s0, &mut scratch);
    let nf = data.n() as f64;
    Ok((raw / (nf * nf.sqrt()), k))
}

/// Argmax change-point estimate from the unstandardized process.
pub fn estimate_changepoint(
    data: &Dataset,
    spec: &WeightedLossSpec,
    cfg: &TestConfig,
    fit: &WeightedFit,
) -> Result<ChangePointEstimate> {
    let grid = split_grid(data.n(), cfg.q0)?;
    let s0 = cfg.s0.min(data.p());
    let (_, k) = unstandardized_max(data, spec, fit, &grid, s0)?;
    Ok(ChangePointEstimate::from_split(k, data.n(), spec.alpha))
}
