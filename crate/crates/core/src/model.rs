//! Domain types and the pointwise loss/score primitives.
//!
//! The weighted composite loss mixes an average of check losses over a grid of
//! quantile levels (each with its own intercept) with a halved squared loss:
//!
//! ```text
//! l_a(x, y; b, beta) = (1 - a) / K * sum_k rho_{tau_k}(y - b_k - x'beta) + a/2 * (y - x'beta)^2
//! ```
//!
//! The score is the subgradient with respect to `beta` only. At a check-loss
//! kink the indicator `1{u <= 0}` is taken to be 1.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::SolverConfig;

/// Time-ordered regression sample: design `x` (n x p) and response `y` (n).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::dims(format!("design has {} rows but response has {} entries", x.nrows(), y.len())));
        }
        if x.nrows() < 2 {
            return Err(Error::input(format!("need at least 2 observations, got {}", x.nrows())));
        }
        if x.ncols() < 1 {
            return Err(Error::input("design must have at least one column"));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % x.nrows(), pos / x.nrows());
            return Err(Error::input(format!("non-finite design entry at row {row}, column {col}")));
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite response at row {row}")));
        }
        Ok(Self { x, y })
    }

    /// Builds a dataset from row-major design rows.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::dims(format!("row {i} has {} columns, expected {p}", r.len())));
        }
        let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        Self::new(x, DVector::from_vec(y))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Copies the contiguous rows `start..end` (0-based, end exclusive).
    pub fn window(&self, start: usize, end: usize) -> Result<Dataset> {
        if start >= end || end > self.n() {
            return Err(Error::input(format!("window {start}..{end} is empty or exceeds n={}", self.n())));
        }
        let m = end - start;
        let x = self.x.rows(start, m).into_owned();
        let y = self.y.rows(start, m).into_owned();
        Ok(Dataset { x, y })
    }

    /// Centers and scales every column of `x` and `y` to mean 0 and unit
    /// (population) variance. Constant columns are only centered.
    pub fn standardized(&self) -> Dataset {
        let mut x = self.x.clone();
        for mut col in x.column_iter_mut() {
            standardize_in_place(col.as_mut_slice());
        }
        let mut y = self.y.clone();
        standardize_in_place(y.as_mut_slice());
        Dataset { x, y }
    }
}

fn standardize_in_place(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    for a in v.iter_mut() {
        *a -= mean;
        if sd > 0.0 {
            *a /= sd;
        }
    }
}

/// Loss weight and quantile grid of the weighted composite loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedLossSpec {
    pub alpha: f64,
    pub taus: Vec<f64>,
}

impl WeightedLossSpec {
    pub fn new(alpha: f64, taus: Vec<f64>) -> Result<Self> {
        let spec = Self { alpha, taus };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha must lie in [0,1], got {}", self.alpha)));
        }
        validate_taus(&self.taus)
    }

    pub fn k(&self) -> usize {
        self.taus.len()
    }
}

pub(crate) fn validate_taus(taus: &[f64]) -> Result<()> {
    if taus.is_empty() {
        return Err(Error::config("quantile grid must contain at least one level"));
    }
    if taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::config(format!("quantile levels must lie in (0,1): {taus:?}")));
    }
    if taus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(format!("quantile levels must be strictly increasing: {taus:?}")));
    }
    Ok(())
}

/// Configuration shared by the individual, adaptive and multiple change-point tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    /// Number of largest coordinates aggregated by the (s0,2)-norm.
    pub s0: usize,
    /// Boundary trimming fraction.
    pub q0: f64,
    /// Significance level.
    pub gamma: f64,
    /// Bootstrap replicates.
    pub bootstrap_reps: usize,
    /// Fraction of each side kept by the variance estimator.
    pub h: f64,
    pub alpha_set: Vec<f64>,
    pub taus: Vec<f64>,
    /// `C` in `lambda = C * sqrt(log(p m) / m)`.
    pub lambda_scale: f64,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            s0: 5,
            q0: 0.1,
            gamma: 0.05,
            bootstrap_reps: 200,
            h: 0.9,
            alpha_set: vec![0.0, 0.1, 0.5, 0.9, 1.0],
            taus: vec![0.5],
            lambda_scale: 1.0,
            seed: 0,
            solver: SolverConfig::default(),
        }
    }
}

impl TestConfig {
    /// Default configuration with `s0` clamped to the dimension.
    pub fn for_dimension(p: usize) -> Self {
        let mut cfg = Self::default();
        cfg.s0 = cfg.s0.min(p).max(1);
        cfg
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.s0 < 1 || self.s0 > p {
            return Err(Error::config(format!("s0 must lie in [1, p={p}], got {}", self.s0)));
        }
        if !(self.q0 > 0.0 && self.q0 < 0.5) {
            return Err(Error::config(format!("q0 must lie in (0, 0.5), got {}", self.q0)));
        }
        if !(self.gamma > 0.0 && self.gamma < 0.5) {
            return Err(Error::config(format!("gamma must lie in (0, 0.5), got {}", self.gamma)));
        }
        if self.bootstrap_reps < 1 {
            return Err(Error::config("bootstrap replicates B must be at least 1"));
        }
        if !(self.h > 0.0 && self.h < 1.0) {
            return Err(Error::config(format!("h must lie in (0, 1), got {}", self.h)));
        }
        if self.alpha_set.is_empty() {
            return Err(Error::config("alpha set must be nonempty"));
        }
        if let Some(a) = self.alpha_set.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::config(format!("alpha set entries must lie in [0,1], got {a}")));
        }
        if !(self.lambda_scale >= 0.0 && self.lambda_scale.is_finite()) {
            return Err(Error::config(format!(
                "lambda scale must be finite and nonnegative, got {}",
                self.lambda_scale
            )));
        }
        validate_taus(&self.taus)?;
        self.solver.validate()
    }

    /// Sorted, deduplicated weight set.
    pub fn alphas(&self) -> Vec<f64> {
        let mut a = self.alpha_set.clone();
        a.sort_by(f64::total_cmp);
        a.dedup();
        a
    }

    pub fn loss_spec(&self, alpha: f64) -> WeightedLossSpec {
        WeightedLossSpec { alpha, taus: self.taus.clone() }
    }
}

/// Estimated change point, relative (`t_hat`) and as a split index (`k_hat`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangePointEstimate {
    pub t_hat: f64,
    pub k_hat: usize,
    pub alpha_used: f64,
}

impl ChangePointEstimate {
    pub fn from_split(k: usize, n: usize, alpha: f64) -> Self {
        Self { t_hat: k as f64 / n as f64, k_hat: k, alpha_used: alpha }
    }
}

/// Check loss `rho_tau(t) = t (tau - 1{t <= 0})`.
#[inline]
pub fn check_loss(t: f64, tau: f64) -> f64 {
    if t <= 0.0 {
        t * (tau - 1.0)
    } else {
        t * tau
    }
}

fn check_dims(x: &[f64], spec: &WeightedLossSpec, b: &[f64], beta: &[f64]) -> Result<()> {
    if x.len() != beta.len() {
        return Err(Error::dims(format!("x has length {} but beta has {}", x.len(), beta.len())));
    }
    if b.len() != spec.k() {
        return Err(Error::dims(format!("b has length {} but K={}", b.len(), spec.k())));
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Weighted composite loss at a single observation.
pub fn weighted_loss(x: &[f64], y: f64, spec: &WeightedLossSpec, b: &[f64], beta: &[f64]) -> Result<f64> {
    check_dims(x, spec, b, beta)?;
    let r = y - dot(x, beta);
    Ok(loss_at_residual(r, spec, b))
}

#[inline]
pub(crate) fn loss_at_residual(r: f64, spec: &WeightedLossSpec, b: &[f64]) -> f64 {
    let alpha = spec.alpha;
    let mut quant = 0.0;
    if alpha < 1.0 {
        for (tau, bk) in spec.taus.iter().zip(b) {
            quant += check_loss(r - bk, *tau);
        }
        quant /= spec.k() as f64;
    }
    (1.0 - alpha) * quant + 0.5 * alpha * r * r
}

/// Scalar multiplier `w` such that the score equals `w * x`.
#[inline]
pub(crate) fn score_weight(r: f64, spec: &WeightedLossSpec, b: &[f64]) -> f64 {
    let alpha = spec.alpha;
    let mut quant = 0.0;
    for (tau, bk) in spec.taus.iter().zip(b) {
        let ind = if r - bk <= 0.0 { 1.0 } else { 0.0 };
        quant += ind - tau;
    }
    (1.0 - alpha) * quant / spec.k() as f64 - alpha * r
}

/// Subgradient of the weighted loss with respect to `beta`.
pub fn score(x: &[f64], y: f64, spec: &WeightedLossSpec, b: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    check_dims(x, spec, b, beta)?;
    let w = score_weight(y - dot(x, beta), spec, b);
    Ok(x.iter().map(|v| w * v).collect())
}

/// `(s0,2)`-norm: Euclidean norm of the `s0` largest absolute entries.
pub fn s0_norm(v: &[f64], s0: usize) -> Result<f64> {
    if s0 < 1 || s0 > v.len() {
        return Err(Error::config(format!("s0 must lie in [1, {}], got {s0}", v.len())));
    }
    let mut scratch = Vec::with_capacity(v.len());
    Ok(s0_norm_with(v.iter().copied(), s0, &mut scratch))
}

/// Partial-selection kernel behind [`s0_norm`]; `s0` must already be valid.
pub(crate) fn s0_norm_with(v: impl Iterator<Item = f64>, s0: usize, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend(v.map(|a| a * a));
    let p = scratch.len();
    if s0 == 1 {
        return scratch.iter().copied().fold(0.0, f64::max).sqrt();
    }
    if s0 < p {
        // Largest s0 squares end up in the tail.
        scratch.select_nth_unstable_by(p - s0, f64::total_cmp);
        scratch[p - s0..].iter().sum::<f64>().sqrt()
    } else {
        scratch.iter().sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(alpha: f64, taus: &[f64]) -> WeightedLossSpec {
        WeightedLossSpec::new(alpha, taus.to_vec()).unwrap()
    }

    #[test]
    fn check_loss_examples() {
        assert_eq!(check_loss(0.0, 0.3), 0.0);
        assert_eq!(check_loss(2.0, 0.5), 1.0);
        assert!((check_loss(-1.0, 0.3) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn weighted_loss_examples() {
        let s = spec(1.0, &[0.25, 0.5]);
        let v = weighted_loss(&[1.0, 2.0], 5.0, &s, &[3.0, -7.0], &[1.0, 1.0]).unwrap();
        assert_eq!(v, 2.0); // (5 - 3)^2 / 2
        let s = spec(0.0, &[0.5]);
        assert_eq!(weighted_loss(&[1.0], 4.0, &s, &[0.0], &[0.0]).unwrap(), 2.0);
        let s = spec(0.5, &[0.5]);
        assert_eq!(weighted_loss(&[1.0], 2.0, &s, &[0.0], &[0.0]).unwrap(), 1.5);
    }

    #[test]
    fn weighted_loss_rejects_mismatch() {
        let s = spec(0.5, &[0.5]);
        assert!(matches!(weighted_loss(&[1.0, 2.0], 1.0, &s, &[0.0], &[0.0]), Err(Error::DimensionMismatch(_))));
        assert!(score(&[1.0], 1.0, &s, &[0.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn score_examples() {
        let x = [0.5, -2.0];
        let beta = [0.3, 0.1];
        let s = spec(1.0, &[0.5]);
        let z = score(&x, 1.7, &s, &[9.0], &beta).unwrap();
        let r = 1.7 - dot(&x, &beta);
        assert_eq!(z, vec![-x[0] * r, -x[1] * r]);

        let s = spec(0.0, &[0.5]);
        let z = score(&x, 10.0, &s, &[0.0], &beta).unwrap();
        assert_eq!(z, vec![-0.25, 1.0]);

        let s = spec(0.5, &[0.5]);
        let z = score(&[1.0, 2.0], 3.0, &s, &[0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(z, vec![-1.25, -2.5]);
    }

    #[test]
    fn score_kink_convention() {
        // residual exactly at the intercept: indicator counts as 1
        let s = spec(0.0, &[0.3]);
        let z = score(&[1.0], 2.0, &s, &[2.0], &[0.0]).unwrap();
        assert!((z[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn s0_norm_examples() {
        let v = [3.0, -4.0, 1.0, 0.0];
        assert_eq!(s0_norm(&v, 2).unwrap(), 5.0);
        assert_eq!(s0_norm(&v, 1).unwrap(), 4.0);
        assert!((s0_norm(&v, 4).unwrap() - 26f64.sqrt()).abs() < 1e-15);
        assert!(s0_norm(&v, 0).is_err());
        assert!(s0_norm(&v, 5).is_err());
    }

    #[test]
    fn dataset_validation() {
        let x = DMatrix::from_element(3, 2, 1.0);
        assert!(Dataset::new(x.clone(), DVector::from_element(2, 0.0)).is_err());
        let mut bad = x.clone();
        bad[(1, 1)] = f64::NAN;
        assert!(Dataset::new(bad, DVector::from_element(3, 0.0)).is_err());
        assert!(Dataset::new(DMatrix::zeros(1, 2), DVector::zeros(1)).is_err());
        let d = Dataset::new(x, DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        let w = d.window(1, 3).unwrap();
        assert_eq!(w.n(), 2);
        assert_eq!(w.y()[0], 2.0);
        assert!(d.window(2, 2).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(WeightedLossSpec::new(1.2, vec![0.5]).is_err());
        assert!(WeightedLossSpec::new(0.5, vec![]).is_err());
        assert!(WeightedLossSpec::new(0.5, vec![0.5, 0.5]).is_err());
        assert!(WeightedLossSpec::new(0.5, vec![0.0]).is_err());
        let mut cfg = TestConfig::for_dimension(3);
        assert_eq!(cfg.s0, 3);
        assert!(cfg.validate(3).is_ok());
        cfg.alpha_set.clear();
        assert!(cfg.validate(3).is_err());
    }

    fn sorted_s0_norm(v: &[f64], s0: usize) -> f64 {
        let mut a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        a.sort_by(|x, y| y.total_cmp(x));
        a[..s0].iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    proptest! {
        #[test]
        fn check_loss_nonnegative_and_convex(t in -50.0..50.0f64, u in -50.0..50.0f64, tau in 0.01..0.99f64) {
            prop_assert!(check_loss(t, tau) >= 0.0);
            prop_assert_eq!(check_loss(t, tau) == 0.0, t == 0.0);
            let mid = check_loss(0.5 * (t + u), tau);
            prop_assert!(mid <= 0.5 * (check_loss(t, tau) + check_loss(u, tau)) + 1e-12);
        }

        #[test]
        fn weighted_loss_convex(
            alpha in 0.0..=1.0f64,
            theta in 0.0..=1.0f64,
            x in prop::collection::vec(-3.0..3.0f64, 3),
            y in -5.0..5.0f64,
            u in prop::collection::vec(-3.0..3.0f64, 5),
            v in prop::collection::vec(-3.0..3.0f64, 5),
        ) {
            let s = spec(alpha, &[0.25, 0.75]);
            let eval = |w: &[f64]| weighted_loss(&x, y, &s, &w[3..], &w[..3]).unwrap();
            let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
            prop_assert!(eval(&mix) <= theta * eval(&u) + (1.0 - theta) * eval(&v) + 1e-12);
        }

        #[test]
        fn score_is_subgradient(
            alpha in 0.0..=1.0f64,
            x in prop::collection::vec(-3.0..3.0f64, 3),
            y in -5.0..5.0f64,
            beta in prop::collection::vec(-2.0..2.0f64, 3),
            d in prop::collection::vec(-1.0..1.0f64, 3),
            b in prop::collection::vec(-1.0..1.0f64, 2),
        ) {
            let s = spec(alpha, &[0.3, 0.6]);
            let z = score(&x, y, &s, &b, &beta).unwrap();
            let moved: Vec<f64> = beta.iter().zip(&d).map(|(a, e)| a + e).collect();
            let lhs = weighted_loss(&x, y, &s, &b, &moved).unwrap();
            let rhs = weighted_loss(&x, y, &s, &b, &beta).unwrap() + dot(&z, &d);
            prop_assert!(lhs >= rhs - 1e-10);
        }

        #[test]
        fn s0_norm_matches_sort_and_is_a_norm(
            v in prop::collection::vec(-10.0..10.0f64, 1..12),
            w_seed in prop::collection::vec(-10.0..10.0f64, 12),
            c in -5.0..5.0f64,
            s0_frac in 0.0..1.0f64,
        ) {
            let p = v.len();
            let s0 = 1 + ((p - 1) as f64 * s0_frac) as usize;
            let w = &w_seed[..p];
            let nv = s0_norm(&v, s0).unwrap();
            prop_assert!((nv - sorted_s0_norm(&v, s0)).abs() <= 1e-12 * (1.0 + nv));
            let sum: Vec<f64> = v.iter().zip(w).map(|(a, b)| a + b).collect();
            prop_assert!(s0_norm(&sum, s0).unwrap() <= nv + s0_norm(w, s0).unwrap() + 1e-12);
            let scaled: Vec<f64> = v.iter().map(|a| c * a).collect();
            prop_assert!((s0_norm(&scaled, s0).unwrap() - c.abs() * nv).abs() <= 1e-10 * (1.0 + nv));
            if s0 < p {
                prop_assert!(s0_norm(&v, s0 + 1).unwrap() >= nv - 1e-12);
            }
        }
    }
}
