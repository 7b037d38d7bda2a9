//! L1-penalized weighted composite regression.
//!
//! Minimizes, over quantile intercepts `b` (K) and coefficients `beta` (p),
//!
//! ```text
//! (1-a)/(mK) sum_i sum_k rho_{tau_k}(y_i - b_k - x_i'beta) + a/(2m) sum_i (y_i - x_i'beta)^2 + lambda |beta|_1
//! ```
//!
//! Two engines locate the optimal face of this piecewise-quadratic problem:
//! a primal-dual interior point method (default) and ADMM on the splitting
//! `u_ik = y_i - b_k - x_i'beta`, `z = beta`, whose steps are a fixed
//! ridge-type solve, the closed-form check-loss prox and soft-thresholding.
//! Either way the coefficient support and the residuals pinned at a kink
//! identify a face; solving the equality-constrained quadratic on that face
//! ("polish") lands on the exact minimizer, which is then certified through
//! the KKT conditions. ADMM also takes over if the interior point iterations
//! stall.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_loss, Dataset, TestConfig, WeightedLossSpec};

mod admm;
mod ipm;

use admm::Admm;
use ipm::Ipm;

const IPM_MAX_ITER: usize = 200;

/// Optimization engine. Both finish with the same exact polish and KKT
/// certificate; ADMM also serves as the fallback when the interior point
/// iterations break down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    #[default]
    InteriorPoint,
    Admm,
}

/// Solver knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// KKT tolerance, relative to `max(1, |y|_inf)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Half-width of the uniform kernel used to smooth the check loss for a
    /// warm start. Zero disables the smoothed pre-solve.
    pub smoothing_bandwidth: f64,
    /// ADMM augmented-Lagrangian penalty.
    pub admm_rho: f64,
    pub engine: Engine,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 10_000, smoothing_bandwidth: 0.0, admm_rho: 1.0, engine: Engine::default() }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::config(format!("solver tol must be positive, got {}", self.tol)));
        }
        if self.max_iter < 1 {
            return Err(Error::config("solver max_iter must be at least 1"));
        }
        if !(self.smoothing_bandwidth >= 0.0) {
            return Err(Error::config("smoothing bandwidth must be nonnegative"));
        }
        if !(self.admm_rho > 0.0) {
            return Err(Error::config("ADMM rho must be positive"));
        }
        Ok(())
    }
}

/// Penalized estimate on one sample window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedFit {
    pub b_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub lambda: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest stationarity violation found at the returned point.
    pub kkt_residual: f64,
}

/// `C * sqrt(log(p m) / m)` for an `m x p` window.
pub fn lambda_for_window(m: usize, p: usize, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let m = m as f64;
    scale * ((p as f64 * m).ln() / m).sqrt()
}

/// Penalty level for a window, using the configured scale.
pub fn select_lambda(data: &Dataset, cfg: &TestConfig) -> f64 {
    lambda_for_window(data.n(), data.p(), cfg.lambda_scale)
}

/// Penalized objective at `(b, beta)`.
pub fn objective(data: &Dataset, spec: &WeightedLossSpec, b: &[f64], beta: &[f64], lambda: f64) -> Result<f64> {
    check_shapes(data, spec, b, beta)?;
    let xb = data.x() * DVector::from_column_slice(beta);
    Ok(objective_from_fitted(data.y(), &xb, spec, b, beta, lambda))
}

fn check_shapes(data: &Dataset, spec: &WeightedLossSpec, b: &[f64], beta: &[f64]) -> Result<()> {
    if beta.len() != data.p() {
        return Err(Error::dims(format!("beta has length {}, p={}", beta.len(), data.p())));
    }
    if b.len() != spec.k() {
        return Err(Error::dims(format!("b has length {}, K={}", b.len(), spec.k())));
    }
    Ok(())
}

fn objective_from_fitted(
    y: &DVector<f64>,
    xb: &DVector<f64>,
    spec: &WeightedLossSpec,
    b: &[f64],
    beta: &[f64],
    lambda: f64,
) -> f64 {
    let m = y.len() as f64;
    let alpha = spec.alpha;
    let kf = spec.k() as f64;
    let mut quant = 0.0;
    let mut sq = 0.0;
    for i in 0..y.len() {
        let r = y[i] - xb[i];
        if alpha < 1.0 {
            for (tau, bk) in spec.taus.iter().zip(b) {
                quant += check_loss(r - bk, *tau);
            }
        }
        sq += r * r;
    }
    let l1: f64 = beta.iter().map(|v| v.abs()).sum();
    (1.0 - alpha) * quant / (m * kf) + alpha * sq / (2.0 * m) + lambda * l1
}

/// Empirical quantile `inf{t : F_m(t) >= tau}`.
pub(crate) fn empirical_quantile(values: &[f64], tau: f64) -> f64 {
    let mut v = values.to_vec();
    let m = v.len();
    let rank = ((m as f64 * tau - 1e-9).ceil() as usize).clamp(1, m);
    let (_, q, _) = v.select_nth_unstable_by(rank - 1, f64::total_cmp);
    *q
}

/// Check-loss subgradients at the residuals `r_ik = r_i - b_k`, stored `k * m + i`.
/// Points at a kink share the value that zeroes the intercept gradient.
fn balanced_subgradients(resid: &[f64], taus: &[f64], b: &[f64], kink_tol: f64) -> Vec<f64> {
    let m = resid.len();
    let mut s = vec![0.0; m * taus.len()];
    for (k, (tau, bk)) in taus.iter().zip(b).enumerate() {
        let mut fixed_sum = 0.0;
        let mut kinks = Vec::new();
        for i in 0..m {
            let r = resid[i] - bk;
            if r.abs() <= kink_tol {
                kinks.push(i);
            } else {
                let v = if r > 0.0 { *tau } else { tau - 1.0 };
                s[k * m + i] = v;
                fixed_sum += v;
            }
        }
        if !kinks.is_empty() {
            let share = (-fixed_sum / kinks.len() as f64).clamp(tau - 1.0, *tau);
            for i in kinks {
                s[k * m + i] = share;
            }
        }
    }
    s
}

/// Smallest penalty at which `beta = 0` is stationary (intercepts at the
/// empirical quantiles of `y`).
pub fn lambda_max(data: &Dataset, spec: &WeightedLossSpec) -> f64 {
    let y = data.y().as_slice();
    let b: Vec<f64> = spec.taus.iter().map(|t| empirical_quantile(y, *t)).collect();
    let m = data.n();
    let tol = 1e-12 * (1.0 + data.y().amax());
    let s = balanced_subgradients(y, &spec.taus, &b, tol);
    let c = (1.0 - spec.alpha) / spec.k() as f64;
    let mut w = DVector::from_fn(m, |i, _| -spec.alpha * y[i]);
    for k in 0..spec.k() {
        for i in 0..m {
            w[i] -= c * s[k * m + i];
        }
    }
    let g = data.x().tr_mul(&w) / m as f64;
    g.amax()
}

/// Largest KKT violation at `(b, beta)`, normalized like the objective.
///
/// Residuals within a tiny tolerance of a kink get a subgradient chosen to
/// balance the intercept equations, so the value is an upper bound on the
/// smallest achievable violation.
pub fn kkt_residual(data: &Dataset, spec: &WeightedLossSpec, b: &[f64], beta: &[f64], lambda: f64) -> Result<f64> {
    check_shapes(data, spec, b, beta)?;
    let prob = Problem::new(data, spec, lambda);
    let beta = DVector::from_column_slice(beta);
    let xb = data.x() * &beta;
    let resid: Vec<f64> = (0..prob.m).map(|i| data.y()[i] - xb[i]).collect();
    let s = if prob.has_quantile { balanced_subgradients(&resid, &spec.taus, b, prob.kink_tol()) } else { Vec::new() };
    Ok(prob.kkt(&beta, &xb, &s))
}

/// Fits from scratch.
pub fn fit_weighted_lasso(
    data: &Dataset,
    spec: &WeightedLossSpec,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<WeightedFit> {
    fit_weighted_lasso_warm(data, spec, lambda, cfg, None)
}

/// Fits starting from `warm` (dimensions must agree).
pub fn fit_weighted_lasso_warm(
    data: &Dataset,
    spec: &WeightedLossSpec,
    lambda: f64,
    cfg: &SolverConfig,
    warm: Option<&WeightedFit>,
) -> Result<WeightedFit> {
    spec.validate()?;
    cfg.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::input(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    if data.n() < spec.k() + 1 {
        return Err(Error::input(format!(
            "window of {} observations is too short for K={} quantile levels",
            data.n(),
            spec.k()
        )));
    }
    if let Some(w) = warm {
        check_shapes(data, spec, &w.b_hat, &w.beta_hat)?;
    }
    let prob = Problem::new(data, spec, lambda);
    Ok(prob.solve(cfg, warm))
}

/// Picks the penalty scale `C` by interleaved `folds`-fold cross-validation
/// of the unpenalized held-out loss.
pub fn cross_validate_lambda_scale(
    data: &Dataset,
    spec: &WeightedLossSpec,
    scales: &[f64],
    folds: usize,
    cfg: &SolverConfig,
) -> Result<f64> {
    if scales.is_empty() {
        return Err(Error::config("cross-validation needs at least one candidate scale"));
    }
    if folds < 2 || folds > data.n() {
        return Err(Error::config(format!("fold count {folds} invalid for n={}", data.n())));
    }
    let n = data.n();
    let mut best = (f64::INFINITY, scales[0]);
    for &scale in scales {
        let mut loss = 0.0;
        for f in 0..folds {
            let train: Vec<usize> = (0..n).filter(|i| i % folds != f).collect();
            let test: Vec<usize> = (0..n).filter(|i| i % folds == f).collect();
            let sub = subset(data, &train)?;
            let lam = lambda_for_window(sub.n(), sub.p(), scale);
            let fit = fit_weighted_lasso(&sub, spec, lam, cfg)?;
            let beta = DVector::from_column_slice(&fit.beta_hat);
            for &i in &test {
                let r = data.y()[i] - data.x().row(i).dot(&beta.transpose());
                loss += crate::model::loss_at_residual(r, spec, &fit.b_hat);
            }
        }
        if loss < best.0 {
            best = (loss, scale);
        }
    }
    Ok(best.1)
}

fn subset(data: &Dataset, rows: &[usize]) -> Result<Dataset> {
    let x = data.x().select_rows(rows);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| data.y()[i]));
    Dataset::new(x, y)
}

#[inline]
fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Problem data in the m-scaled form
/// `c sum rho(r_ik) + a/2 |y - X beta|^2 + L |beta|_1` with `c = (1-a)/K`, `L = m lambda`.
struct Problem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    taus: &'a [f64],
    m: usize,
    p: usize,
    k: usize,
    alpha: f64,
    c: f64,
    lambda: f64,
    pen: f64,
    has_quantile: bool,
    y_scale: f64,
}

/// Sign pattern of a candidate solution: coefficient signs (0 = off the
/// support) and residual signs per `(i, k)` (0 = pinned at the kink).
#[derive(Clone, PartialEq)]
struct Face {
    beta_sign: Vec<i8>,
    state: Vec<i8>,
}

struct Polished {
    cand: Candidate,
    /// Multiplier-implied check-loss subgradients at kink residuals.
    kink_s: Vec<f64>,
}

struct Candidate {
    beta: DVector<f64>,
    b: Vec<f64>,
    objective: f64,
    kkt: f64,
}

impl<'a> Problem<'a> {
    fn new(data: &'a Dataset, spec: &'a WeightedLossSpec, lambda: f64) -> Self {
        let m = data.n();
        let k = spec.k();
        Self {
            x: data.x(),
            y: data.y(),
            taus: &spec.taus,
            m,
            p: data.p(),
            k,
            alpha: spec.alpha,
            c: (1.0 - spec.alpha) / k as f64,
            lambda,
            pen: m as f64 * lambda,
            has_quantile: spec.alpha < 1.0,
            y_scale: data.y().amax().max(1.0),
        }
    }

    fn kink_tol(&self) -> f64 {
        1e-9 * self.y_scale
    }

    fn spec(&self) -> WeightedLossSpec {
        WeightedLossSpec { alpha: self.alpha, taus: self.taus.to_vec() }
    }

    fn objective(&self, beta: &DVector<f64>, b: &[f64], xb: &DVector<f64>) -> f64 {
        objective_from_fitted(self.y, xb, &self.spec(), b, beta.as_slice(), self.lambda)
    }

    /// Stationarity violation in the original (1/m) scaling. `s` holds a
    /// check-loss subgradient for every `(i, k)` (ignored when `alpha = 1`).
    fn kkt(&self, beta: &DVector<f64>, xb: &DVector<f64>, s: &[f64]) -> f64 {
        let m = self.m;
        let mf = m as f64;
        let mut w = DVector::from_fn(m, |i, _| -self.alpha * (self.y[i] - xb[i]));
        let mut worst: f64 = 0.0;
        if self.has_quantile {
            for k in 0..self.k {
                let mut bsum = 0.0;
                for i in 0..m {
                    let sik = s[k * m + i];
                    w[i] -= self.c * sik;
                    bsum += sik;
                }
                worst = worst.max((self.c * bsum / mf).abs());
            }
        }
        let g = self.x.tr_mul(&w) / mf;
        for j in 0..self.p {
            let v = if beta[j] != 0.0 {
                (g[j] + self.lambda * beta[j].signum()).abs()
            } else {
                (g[j].abs() - self.lambda).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Exact check-loss subgradients away from kinks; at kinks the finite
    /// entries of `hint` (clipped), otherwise the balancing share.
    fn subgradients_with_hint(&self, resid: &[f64], b: &[f64], hint: &[f64]) -> Vec<f64> {
        let m = self.m;
        let tol = self.kink_tol();
        let mut s = balanced_subgradients(resid, self.taus, b, tol);
        for k in 0..self.k {
            let tau = self.taus[k];
            for i in 0..m {
                let h = hint[k * m + i];
                if (resid[i] - b[k]).abs() <= tol && h.is_finite() {
                    s[k * m + i] = h.clamp(tau - 1.0, tau);
                }
            }
        }
        s
    }

    fn evaluate(&self, beta: DVector<f64>, b: Vec<f64>, hint: Option<&[f64]>) -> Candidate {
        let xb = self.x * &beta;
        let b = if self.has_quantile {
            b
        } else {
            let resid: Vec<f64> = (0..self.m).map(|i| self.y[i] - xb[i]).collect();
            self.taus.iter().map(|t| empirical_quantile(&resid, *t)).collect()
        };
        let objective = self.objective(&beta, &b, &xb);
        let kkt = if self.has_quantile {
            let resid: Vec<f64> = (0..self.m).map(|i| self.y[i] - xb[i]).collect();
            let s = match hint {
                Some(h) => self.subgradients_with_hint(&resid, &b, h),
                None => balanced_subgradients(&resid, self.taus, &b, self.kink_tol()),
            };
            self.kkt(&beta, &xb, &s)
        } else {
            self.kkt(&beta, &xb, &[])
        };
        Candidate { beta, b, objective, kkt }
    }

    fn zero_candidate(&self) -> Candidate {
        let y = self.y.as_slice();
        let b: Vec<f64> = self.taus.iter().map(|t| empirical_quantile(y, *t)).collect();
        self.evaluate(DVector::zeros(self.p), b, None)
    }

    fn certified(&self, cand: &Candidate, tol: f64) -> bool {
        cand.kkt <= tol * self.y_scale
    }

    fn solve(&self, cfg: &SolverConfig, warm: Option<&WeightedFit>) -> WeightedFit {
        let mut best = self.zero_candidate();
        let mut iterations = 0;
        if self.certified(&best, cfg.tol) {
            return self.finish(best, iterations, cfg.tol);
        }

        let mut start: Option<(DVector<f64>, Vec<f64>)> =
            warm.map(|w| (DVector::from_column_slice(&w.beta_hat), w.b_hat.clone()));
        if start.is_none() && cfg.smoothing_bandwidth > 0.0 && self.has_quantile {
            start = Some(self.smoothed_start(cfg.smoothing_bandwidth, 500));
        }
        if let Some((beta, b)) = &start {
            let cand = self.evaluate(beta.clone(), b.clone(), None);
            let face = self.face_of(&cand);
            if cand.objective < best.objective {
                best = cand;
            }
            if let Some(cand) = self.refine(face, &mut best, cfg.tol, 5) {
                return self.finish(cand, iterations, cfg.tol);
            }
        }

        if cfg.engine == Engine::InteriorPoint {
            let mut ipm = Ipm::new(self);
            let mut tried: Option<Face> = None;
            while iterations < cfg.max_iter.min(IPM_MAX_ITER) {
                if !ipm.step(self) {
                    break;
                }
                iterations += 1;
                let ratio = ipm.mu() / ipm.mu0;
                if ratio < 1e-5 {
                    let cand = self.evaluate(ipm.beta(), ipm.intercepts(), None);
                    if cand.objective < best.objective {
                        best = cand;
                    }
                    let face = ipm.face();
                    if tried.as_ref() != Some(&face) {
                        tried = Some(face.clone());
                        if let Some(cand) = self.refine(face, &mut best, cfg.tol, 3) {
                            return self.finish(cand, iterations, cfg.tol);
                        }
                    }
                }
                if ratio < 1e-15 {
                    break;
                }
            }
            if self.certified(&best, cfg.tol) {
                return self.finish(best, iterations, cfg.tol);
            }
        }
        let (beta0, b0) = match start {
            Some(s) if cfg.engine == Engine::Admm => s,
            _ => (best.beta.clone(), best.b.clone()),
        };

        let mut admm = Admm::new(self, beta0, b0, cfg.admm_rho);
        let mut eps = 1e-4;
        let mut debug_prev = best.objective;
        let mut polished_face: Option<Face> = None;
        while iterations < cfg.max_iter {
            admm.step(self);
            iterations += 1;
            let last = iterations == cfg.max_iter;
            if iterations % 10 != 0 && !last {
                continue;
            }
            let res = admm.residuals(self, eps);
            let settled = res.pri <= res.e_pri && res.dual <= res.e_dual;
            if iterations % 50 == 0 || settled || last {
                let hint = admm.prox_subgradients(self);
                let cand = self.evaluate(admm.z.clone(), admm.b.clone(), Some(&hint));
                if cand.objective < best.objective {
                    best = cand;
                }
                debug_assert!(best.objective <= debug_prev);
                debug_prev = best.objective;

                // polish whenever the identified face changed
                let face = admm.face();
                if polished_face.as_ref() != Some(&face) {
                    polished_face = Some(face.clone());
                    if let Some(cand) = self.refine(face, &mut best, cfg.tol, 5) {
                        return self.finish(cand, iterations, cfg.tol);
                    }
                }
                if self.certified(&best, cfg.tol) {
                    return self.finish(best, iterations, cfg.tol);
                }
            }
            if settled {
                eps = (eps * 0.1).max(1e-13);
            }
        }
        self.finish(best, iterations, cfg.tol)
    }

    fn finish(&self, cand: Candidate, iterations: usize, tol: f64) -> WeightedFit {
        WeightedFit {
            converged: self.certified(&cand, tol),
            b_hat: cand.b,
            beta_hat: cand.beta.as_slice().to_vec(),
            lambda: self.lambda,
            objective: cand.objective,
            iterations,
            kkt_residual: cand.kkt,
        }
    }

    /// Solves the equality-constrained quadratic on `face`: coefficients off
    /// the support are zero, kink residuals are pinned at zero and every other
    /// residual keeps its sign.
    fn polish(&self, face: &Face) -> Option<Polished> {
        let m = self.m;
        let support: Vec<usize> = (0..self.p).filter(|&j| face.beta_sign[j] != 0).collect();
        let ns = support.len();
        let nb = if self.has_quantile { self.k } else { 0 };
        let d = ns + nb;
        if d == 0 {
            return None;
        }
        let mut kinks: Vec<(usize, usize)> = Vec::new();
        // gradient of the linear part
        let mut g = DVector::<f64>::zeros(d);
        if self.has_quantile {
            let mut wsum = DVector::<f64>::zeros(m);
            for k in 0..self.k {
                let tau = self.taus[k];
                for i in 0..m {
                    match face.state[k * m + i] {
                        0 => kinks.push((i, k)),
                        st => {
                            let s = if st > 0 { tau } else { tau - 1.0 };
                            wsum[i] += s;
                            g[ns + k] -= self.c * s;
                        }
                    }
                }
            }
            for (a, &j) in support.iter().enumerate() {
                g[a] -= self.c * self.x.column(j).dot(&wsum);
            }
        }
        for (a, &j) in support.iter().enumerate() {
            g[a] += -self.alpha * self.x.column(j).dot(self.y) + self.pen * f64::from(face.beta_sign[j]);
        }
        let nz = kinks.len();
        let dim = d + nz;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        if self.alpha > 0.0 {
            for (a, &ja) in support.iter().enumerate() {
                for (bb, &jb) in support.iter().enumerate().skip(a) {
                    let v = self.alpha * self.x.column(ja).dot(&self.x.column(jb));
                    kkt[(a, bb)] = v;
                    kkt[(bb, a)] = v;
                }
            }
        }
        for a in 0..d {
            rhs[a] = -g[a];
        }
        for (row, &(i, k)) in kinks.iter().enumerate() {
            let r = d + row;
            for (a, &j) in support.iter().enumerate() {
                kkt[(r, a)] = self.x[(i, j)];
                kkt[(a, r)] = self.x[(i, j)];
            }
            kkt[(r, ns + k)] = 1.0;
            kkt[(ns + k, r)] = 1.0;
            rhs[r] = self.y[i];
        }
        let sol = match kkt.clone().lu().solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => {
                let svd = kkt.svd(true, true);
                svd.solve(&rhs, 1e-12).ok()?
            }
        };
        let mut beta = DVector::zeros(self.p);
        for (a, &j) in support.iter().enumerate() {
            beta[j] = sol[a];
        }
        let mut b: Vec<f64> = if self.has_quantile { (0..self.k).map(|k| sol[ns + k]).collect() } else { Vec::new() };
        if !beta.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return None;
        }
        // an intercept with no pinned residual is only determined up to an
        // interval of minimizers; take the empirical quantile given beta
        let mut pinned = vec![false; b.len()];
        for &(_, k) in &kinks {
            pinned[k] = true;
        }
        if pinned.iter().any(|p| !p) {
            let xb = self.x * &beta;
            let resid: Vec<f64> = (0..m).map(|i| self.y[i] - xb[i]).collect();
            for k in 0..b.len() {
                if !pinned[k] {
                    b[k] = empirical_quantile(&resid, self.taus[k]);
                }
            }
        }
        let mut kink_s = vec![f64::NAN; if self.has_quantile { m * self.k } else { 0 }];
        for (row, &(i, k)) in kinks.iter().enumerate() {
            kink_s[k * m + i] = -sol[d + row] / self.c;
        }
        let cand = self.evaluate(beta, b, self.has_quantile.then_some(kink_s.as_slice()));
        Some(Polished { cand, kink_s })
    }

    /// Primal-dual active-set update: moves residuals that crossed zero onto
    /// the kink set, releases kinks whose multiplier left `[tau-1, tau]`,
    /// drops coefficients whose sign flipped and adds violated coordinates.
    fn next_face(&self, face: &Face, out: &Polished) -> Face {
        let m = self.m;
        let beta = &out.cand.beta;
        let xb = self.x * beta;
        let tol = self.kink_tol();
        let mut state = face.state.clone();
        let mut w = DVector::from_fn(m, |i, _| -self.alpha * (self.y[i] - xb[i]));
        if self.has_quantile {
            for k in 0..self.k {
                let tau = self.taus[k];
                for i in 0..m {
                    let idx = k * m + i;
                    let r = self.y[i] - xb[i] - out.cand.b[k];
                    let s = match face.state[idx] {
                        0 => {
                            let raw = out.kink_s[idx];
                            if r > tol {
                                state[idx] = 1;
                            } else if r < -tol {
                                state[idx] = -1;
                            } else if raw > tau + 1e-12 {
                                state[idx] = 1;
                            } else if raw < tau - 1.0 - 1e-12 {
                                state[idx] = -1;
                            }
                            raw.clamp(tau - 1.0, tau)
                        }
                        st => {
                            if (st > 0 && r < -tol) || (st < 0 && r > tol) {
                                state[idx] = 0;
                            }
                            if st > 0 {
                                tau
                            } else {
                                tau - 1.0
                            }
                        }
                    };
                    w[i] -= self.c * s;
                }
            }
        }
        let grad = self.x.tr_mul(&w) / m as f64;
        let mut beta_sign = face.beta_sign.clone();
        for j in 0..self.p {
            if face.beta_sign[j] != 0 {
                if beta[j] * f64::from(face.beta_sign[j]) <= 0.0 {
                    beta_sign[j] = 0;
                }
            } else if grad[j].abs() > self.lambda * (1.0 + 1e-9) + 1e-14 {
                beta_sign[j] = if grad[j] > 0.0 { -1 } else { 1 };
            }
        }
        Face { beta_sign, state }
    }

    /// Sign pattern of a point, with near-zero residuals on the kink set.
    fn face_of(&self, cand: &Candidate) -> Face {
        let xb = self.x * &cand.beta;
        let tol = self.kink_tol();
        let sign = |v: f64, t: f64| -> i8 {
            if v > t {
                1
            } else if v < -t {
                -1
            } else {
                0
            }
        };
        let mut state = Vec::new();
        if self.has_quantile {
            for k in 0..self.k {
                for i in 0..self.m {
                    state.push(sign(self.y[i] - xb[i] - cand.b[k], tol));
                }
            }
        }
        Face { beta_sign: cand.beta.iter().map(|v| sign(*v, 0.0)).collect(), state }
    }

    /// Runs active-set steps from `face`; returns a certified point if found
    /// and keeps `best` updated either way.
    fn refine(&self, mut face: Face, best: &mut Candidate, tol: f64, steps: usize) -> Option<Candidate> {
        let mut seen: Vec<Face> = Vec::new();
        for _ in 0..steps {
            let out = self.polish(&face)?;
            let slack = 1e-12 * (1.0 + best.objective.abs());
            if self.certified(&out.cand, tol) && out.cand.objective <= best.objective + slack {
                return Some(out.cand);
            }
            let next = self.next_face(&face, &out);
            if out.cand.objective < best.objective {
                *best = out.cand;
            }
            if next == face || seen.contains(&next) {
                return None;
            }
            seen.push(face);
            face = next;
        }
        None
    }

    /// FISTA on the objective with a uniform-kernel smoothed check loss.
    fn smoothed_start(&self, bandwidth: f64, iters: usize) -> (DVector<f64>, Vec<f64>) {
        let (m, p, k) = (self.m, self.p, self.k);
        let h = bandwidth;
        // Lipschitz bound via power iteration on [X, 1]
        let mut v = DVector::from_element(p + 1, 1.0);
        let mut sig2 = 1.0;
        for _ in 0..30 {
            let mut av = self.x * v.rows(0, p);
            av.add_scalar_mut(v[p]);
            let mut atav = DVector::zeros(p + 1);
            atav.rows_mut(0, p).copy_from(&self.x.tr_mul(&av));
            atav[p] = av.sum();
            sig2 = atav.norm() / v.norm().max(1e-300);
            v = atav / sig2.max(1e-300);
        }
        let lip = (self.c * k as f64 / (2.0 * h) + self.alpha) * sig2 * k as f64 + 1e-12;
        let step = 1.0 / lip;
        let ybar: Vec<f64> = self.taus.iter().map(|t| empirical_quantile(self.y.as_slice(), *t)).collect();
        let mut beta = DVector::zeros(p);
        let mut b = DVector::from_vec(ybar);
        let mut beta_prev = beta.clone();
        let mut b_prev = b.clone();
        let mut tk = 1.0f64;
        for _ in 0..iters {
            let t_next = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
            let mom = (tk - 1.0) / t_next;
            let yb = &beta + (&beta - &beta_prev) * mom;
            let ybb = &b + (&b - &b_prev) * mom;
            let xb = self.x * &yb;
            let mut w = DVector::from_fn(m, |i, _| -self.alpha * (self.y[i] - xb[i]));
            let mut gb = DVector::zeros(k);
            for kk in 0..k {
                let tau = self.taus[kk];
                for i in 0..m {
                    let r = self.y[i] - xb[i] - ybb[kk];
                    let d = tau - 0.5 + 0.5 * (r / h).clamp(-1.0, 1.0);
                    w[i] -= self.c * d;
                    gb[kk] -= self.c * d;
                }
            }
            let gbeta = self.x.tr_mul(&w);
            beta_prev = beta;
            b_prev = b;
            beta = (&yb - gbeta * step).map(|v| soft_threshold(v, step * self.pen));
            b = &ybb - gb * step;
            tk = t_next;
        }
        (beta, b.as_slice().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_data(m: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(m, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta: Vec<f64> = (0..p).map(|j| if j < 2 { 1.5 } else { 0.0 }).collect();
        let y = DVector::from_fn(m, |i, _| {
            (0..p).map(|j| x[(i, j)] * beta[j]).sum::<f64>() + rng.sample::<f64, _>(StandardNormal)
        });
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn select_lambda_examples() {
        assert!((lambda_for_window(100, 100, 1.0) - 0.30349).abs() < 1e-5);
        assert_eq!(lambda_for_window(100, 100, 0.0), 0.0);
        assert!((lambda_for_window(100, 100, 2.0) - 0.60697).abs() < 1e-5);
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        let data = random_data(50, 2, 1);
        let spec = WeightedLossSpec::new(1.0, vec![0.5]).unwrap();
        let fit = fit_weighted_lasso(&data, &spec, 0.0, &SolverConfig::default()).unwrap();
        let xtx = data.x().tr_mul(data.x());
        let ols = xtx.cholesky().unwrap().solve(&data.x().tr_mul(data.y()));
        for j in 0..2 {
            assert!((fit.beta_hat[j] - ols[j]).abs() < 1e-6, "{:?} vs {}", fit.beta_hat, ols);
        }
        assert!(fit.converged);
    }

    #[test]
    fn large_penalty_gives_median_intercept() {
        let data = random_data(31, 4, 2);
        let spec = WeightedLossSpec::new(0.0, vec![0.5]).unwrap();
        let lam = lambda_max(&data, &spec) * 1.01;
        let fit = fit_weighted_lasso(&data, &spec, lam, &SolverConfig::default()).unwrap();
        assert!(fit.beta_hat.iter().all(|v| *v == 0.0));
        let mut ys: Vec<f64> = data.y().iter().copied().collect();
        ys.sort_by(f64::total_cmp);
        assert!((fit.b_hat[0] - ys[15]).abs() < 1e-9);
    }

    #[test]
    fn even_sample_median_between_middle_order_statistics() {
        let data = random_data(30, 3, 3);
        let spec = WeightedLossSpec::new(0.0, vec![0.5]).unwrap();
        let lam = lambda_max(&data, &spec) * 2.0;
        let fit = fit_weighted_lasso(&data, &spec, lam, &SolverConfig::default()).unwrap();
        let mut ys: Vec<f64> = data.y().iter().copied().collect();
        ys.sort_by(f64::total_cmp);
        assert!(fit.b_hat[0] >= ys[14] - 1e-9 && fit.b_hat[0] <= ys[15] + 1e-9);
    }

    #[test]
    fn lambda_max_zeroes_every_weight() {
        for (s, alpha) in [0.0, 0.3, 0.5, 1.0].iter().enumerate() {
            let data = random_data(40, 6, 10 + s as u64);
            let spec = WeightedLossSpec::new(*alpha, vec![0.25, 0.5, 0.75]).unwrap();
            let lam = lambda_max(&data, &spec);
            let fit = fit_weighted_lasso(&data, &spec, lam * 1.0001, &SolverConfig::default()).unwrap();
            assert!(fit.beta_hat.iter().all(|v| *v == 0.0), "alpha={alpha}: {:?}", fit.beta_hat);
            let below = fit_weighted_lasso(&data, &spec, lam * 0.9, &SolverConfig::default()).unwrap();
            assert!(below.beta_hat.iter().any(|v| *v != 0.0));
        }
    }

    #[test]
    fn fits_are_certified_for_mixed_weights() {
        let data = random_data(80, 10, 4);
        for alpha in [0.0, 0.1, 0.5, 0.9, 1.0] {
            let spec = WeightedLossSpec::new(alpha, vec![0.2, 0.5, 0.8]).unwrap();
            let lam = lambda_for_window(80, 10, 1.0);
            let fit = fit_weighted_lasso(&data, &spec, lam, &SolverConfig::default()).unwrap();
            assert!(fit.converged, "alpha={alpha} kkt={} iters={}", fit.kkt_residual, fit.iterations);
            let obj = objective(&data, &spec, &fit.b_hat, &fit.beta_hat, lam).unwrap();
            assert!((obj - fit.objective).abs() < 1e-12);
        }
    }

    #[test]
    fn optimum_beats_random_perturbations() {
        let data = random_data(60, 5, 5);
        let spec = WeightedLossSpec::new(0.4, vec![0.3, 0.7]).unwrap();
        let lam = 0.1;
        let fit = fit_weighted_lasso(&data, &spec, lam, &SolverConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let beta: Vec<f64> = fit.beta_hat.iter().map(|v| v + 0.01 * rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = fit.b_hat.iter().map(|v| v + 0.01 * rng.random_range(-1.0..1.0)).collect();
            let o = objective(&data, &spec, &b, &beta, lam).unwrap();
            assert!(o >= fit.objective - 1e-12);
        }
    }

    #[test]
    fn warm_start_and_smoothing_agree_with_cold_start() {
        let data = random_data(70, 8, 6);
        let spec = WeightedLossSpec::new(0.2, vec![0.5]).unwrap();
        let lam = 0.15;
        let cold = fit_weighted_lasso(&data, &spec, lam, &SolverConfig::default()).unwrap();
        let smooth_cfg = SolverConfig { smoothing_bandwidth: 0.5, ..SolverConfig::default() };
        let smooth = fit_weighted_lasso(&data, &spec, lam, &smooth_cfg).unwrap();
        let warm = fit_weighted_lasso_warm(&data, &spec, lam, &SolverConfig::default(), Some(&cold)).unwrap();
        for f in [&smooth, &warm] {
            assert!(f.converged);
            assert!((f.objective - cold.objective).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = random_data(10, 2, 7);
        let spec = WeightedLossSpec::new(0.5, vec![0.5]).unwrap();
        assert!(fit_weighted_lasso(&data, &spec, -1.0, &SolverConfig::default()).is_err());
        let short = data.window(0, 2).unwrap();
        let spec3 = WeightedLossSpec::new(0.5, vec![0.25, 0.5, 0.75]).unwrap();
        assert!(fit_weighted_lasso(&short, &spec3, 0.1, &SolverConfig::default()).is_err());
    }

    #[test]
    fn non_convergence_is_reported() {
        let data = random_data(60, 8, 8);
        let spec = WeightedLossSpec::new(0.3, vec![0.5]).unwrap();
        let cfg = SolverConfig { max_iter: 1, ..SolverConfig::default() };
        let fit = fit_weighted_lasso(&data, &spec, 0.05, &cfg).unwrap();
        assert!(!fit.converged);
        assert!(fit.objective.is_finite());
        let zero = objective(&data, &spec, &[empirical_quantile(data.y().as_slice(), 0.5)], &[0.0; 8], 0.05).unwrap();
        assert!(fit.objective <= zero);
    }

    #[test]
    fn support_shrinks_along_penalty_path() {
        for seed in 0..5 {
            let data = random_data(50, 12, 100 + seed);
            let spec = WeightedLossSpec::new(0.5, vec![0.5]).unwrap();
            let top = lambda_max(&data, &spec);
            let mut prev = usize::MAX;
            for step in 0..10 {
                let lam = top * (0.05 + 0.1 * step as f64);
                let fit = fit_weighted_lasso(&data, &spec, lam, &SolverConfig::default()).unwrap();
                let nnz = fit.beta_hat.iter().filter(|v| v.abs() > 1e-8).count();
                assert!(nnz <= prev.saturating_add(1), "seed {seed} step {step}: {nnz} > {prev}");
                prev = nnz;
            }
        }
    }

    #[test]
    fn cross_validation_returns_a_candidate() {
        let data = random_data(60, 5, 11);
        let spec = WeightedLossSpec::new(1.0, vec![0.5]).unwrap();
        let c = cross_validate_lambda_scale(&data, &spec, &[0.1, 1.0, 5.0], 5, &SolverConfig::default()).unwrap();
        assert!([0.1, 1.0, 5.0].contains(&c));
        // a huge penalty kills a real signal, so it should not be chosen
        assert_ne!(c, 5.0);
    }
}
