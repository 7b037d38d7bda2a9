//! Gaussian multiplier bootstrap, individual tests and the tail-adaptive
//! minimum-p-value test.
//!
//! Replicate `b` draws `e_1..e_n ~ N(0,1)` from stream `(seed, BOOTSTRAP, b)`
//! and feeds the same draws to every weight in the set, which is what makes
//! the replicate-wise minimum over weights a valid reference for the
//! adaptive statistic.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::cusum::{max_over_rows, split_grid, unstandardized_max, weighted_cusum_rows};
use crate::error::{Error, Result};
use crate::model::{ChangePointEstimate, Dataset, TestConfig, WeightedLossSpec};
use crate::rng::{domain, stream};
use crate::solver::{fit_weighted_lasso_warm, select_lambda, WeightedFit};
use crate::variance::{estimate_sigma2_warm, VarianceEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualTestResult {
    pub alpha: f64,
    /// Standardized statistic `T_alpha`.
    pub statistic: f64,
    pub p_hat: f64,
    pub reject: bool,
    pub t_hat: ChangePointEstimate,
    pub sigma2: VarianceEstimate,
    pub bootstrap_samples: Vec<f64>,
    pub fit_converged: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveTestResult {
    /// Minimum individual p-value.
    pub t_ad: f64,
    pub p_ad: f64,
    pub reject: bool,
    pub alpha_star: f64,
    pub t_hat_ad: ChangePointEstimate,
    pub individual: Vec<IndividualTestResult>,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Variance of the bootstrap multiplier `(1-alpha) e^b(tau) - alpha e^b`
/// under standard normal draws.
pub fn bootstrap_variance_v2(spec: &WeightedLossSpec) -> f64 {
    let norm = std_normal();
    let k = spec.k() as f64;
    let a = spec.alpha;
    let mut var_e = 0.0;
    for &t1 in &spec.taus {
        for &t2 in &spec.taus {
            var_e += t1.min(t2) - t1 * t2;
        }
    }
    var_e /= k * k;
    // Cov(1{e <= q} - tau, e) = E[e 1{e <= q}] = -phi(q)
    let cov: f64 = spec.taus.iter().map(|&t| -norm.pdf(norm.inverse_cdf(t))).sum::<f64>() / k;
    (1.0 - a).powi(2) * var_e + a * a - 2.0 * a * (1.0 - a) * cov
}

/// Everything a replicate needs, shared across replicates.
struct BootstrapPlan<'a> {
    x: &'a DMatrix<f64>,
    grid: Vec<usize>,
    alphas: Vec<f64>,
    /// `n sqrt(n) v(alpha)` per weight.
    scales: Vec<f64>,
    thresholds: Vec<f64>,
    taus: Vec<f64>,
    s0: usize,
    seed: u64,
}

impl<'a> BootstrapPlan<'a> {
    fn new(x: &'a DMatrix<f64>, cfg: &TestConfig, alphas: &[f64]) -> Result<Self> {
        let n = x.nrows();
        let grid = split_grid(n, cfg.q0)?;
        let norm = std_normal();
        let nf = n as f64;
        let scales = alphas.iter().map(|&a| nf * nf.sqrt() * bootstrap_variance_v2(&cfg.loss_spec(a)).sqrt()).collect();
        Ok(Self {
            x,
            grid,
            alphas: alphas.to_vec(),
            scales,
            thresholds: cfg.taus.iter().map(|&t| norm.inverse_cdf(t)).collect(),
            taus: cfg.taus.clone(),
            s0: cfg.s0.min(x.ncols()).max(1),
            seed: cfg.seed,
        })
    }

    /// Multipliers `(u_i, e_i)` with `u_i` the averaged quantile indicator.
    fn multipliers(&self, replicate: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = stream(self.seed, domain::BOOTSTRAP, replicate as u64);
        let e: Vec<f64> = (0..self.x.nrows()).map(|_| rng.sample(StandardNormal)).collect();
        let k = self.taus.len() as f64;
        let u = e
            .iter()
            .map(|&ei| {
                self.thresholds.iter().zip(&self.taus).map(|(&q, &t)| if ei <= q { 1.0 - t } else { -t }).sum::<f64>()
                    / k
            })
            .collect();
        (u, e)
    }

    /// `T^b_alpha` for every weight of the plan.
    fn replicate(&self, replicate: usize) -> Vec<f64> {
        let (u, e) = self.multipliers(replicate);
        let p = self.x.ncols();
        let ru = weighted_cusum_rows(self.x, &u, &self.grid);
        let re = weighted_cusum_rows(self.x, &e, &self.grid);
        let mut rows = vec![0.0; ru.len()];
        let mut scratch = Vec::with_capacity(p);
        self.alphas
            .iter()
            .zip(&self.scales)
            .map(|(&a, &scale)| {
                for ((r, &cu), &ce) in rows.iter_mut().zip(&ru).zip(&re) {
                    *r = (1.0 - a) * cu - a * ce;
                }
                max_over_rows(&rows, p, &self.grid, self.s0, &mut scratch).0 / scale
            })
            .collect()
    }

    /// Samples indexed `[weight][replicate]`.
    fn run(&self, reps: usize) -> Vec<Vec<f64>> {
        let per_rep: Vec<Vec<f64>> = (0..reps).into_par_iter().map(|b| self.replicate(b)).collect();
        (0..self.alphas.len()).map(|j| per_rep.iter().map(|r| r[j]).collect()).collect()
    }
}

/// One bootstrap replicate of `T_alpha` for design `x`.
pub fn bootstrap_statistic(
    x: &DMatrix<f64>,
    spec: &WeightedLossSpec,
    cfg: &TestConfig,
    replicate: usize,
) -> Result<f64> {
    spec.validate()?;
    let cfg = TestConfig { taus: spec.taus.clone(), ..cfg.clone() };
    let plan = BootstrapPlan::new(x, &cfg, &[spec.alpha])?;
    Ok(plan.replicate(replicate)[0])
}

/// `#{b: T^b > T} / (B + 1)`.
pub fn empirical_pvalue(statistic: f64, samples: &[f64]) -> f64 {
    samples.iter().filter(|&&s| s > statistic).count() as f64 / (samples.len() + 1) as f64
}

/// Observed part of one individual test.
struct Observed {
    alpha: f64,
    statistic: f64,
    t_hat: ChangePointEstimate,
    sigma2: VarianceEstimate,
    fit: WeightedFit,
}

fn observe(data: &Dataset, spec: &WeightedLossSpec, cfg: &TestConfig, warm: Option<&WeightedFit>) -> Result<Observed> {
    let lambda = select_lambda(data, cfg);
    let fit = fit_weighted_lasso_warm(data, spec, lambda, &cfg.solver, warm)?;
    let grid = split_grid(data.n(), cfg.q0)?;
    let (raw, k) = unstandardized_max(data, spec, &fit, &grid, cfg.s0)?;
    let t_hat = ChangePointEstimate::from_split(k, data.n(), spec.alpha);
    let sigma2 = estimate_sigma2_warm(data, spec, cfg, t_hat.t_hat, Some(&fit))?;
    Ok(Observed { alpha: spec.alpha, statistic: raw / sigma2.sigma(), t_hat, sigma2, fit })
}

fn finish(obs: Observed, samples: Vec<f64>, gamma: f64) -> IndividualTestResult {
    let p_hat = empirical_pvalue(obs.statistic, &samples);
    let mut warnings = Vec::new();
    if !obs.fit.converged {
        warnings.push(format!(
            "alpha={}: full-sample fit not certified (KKT residual {:.3e})",
            obs.alpha, obs.fit.kkt_residual
        ));
    }
    if !obs.sigma2.converged {
        warnings.push(format!("alpha={}: a segment refit in the variance estimate was not certified", obs.alpha));
    }
    if obs.sigma2.floored {
        warnings.push(format!(
            "alpha={}: variance estimate {:.3e} floored before standardization",
            obs.alpha, obs.sigma2.sigma2
        ));
    }
    IndividualTestResult {
        alpha: obs.alpha,
        statistic: obs.statistic,
        p_hat,
        reject: p_hat <= gamma,
        t_hat: obs.t_hat,
        sigma2: obs.sigma2,
        bootstrap_samples: samples,
        fit_converged: obs.fit.converged,
        warnings,
    }
}

fn checked(data: &Dataset, cfg: &TestConfig) -> Result<TestConfig> {
    let mut cfg = cfg.clone();
    cfg.s0 = cfg.s0.min(data.p()).max(1);
    cfg.validate(data.p())?;
    Ok(cfg)
}

/// Individual test for one loss weight.
pub fn run_individual_test(data: &Dataset, spec: &WeightedLossSpec, cfg: &TestConfig) -> Result<IndividualTestResult> {
    spec.validate()?;
    let cfg = TestConfig { taus: spec.taus.clone(), ..checked(data, cfg)? };
    let obs = observe(data, spec, &cfg, None)?;
    let samples = BootstrapPlan::new(data.x(), &cfg, &[spec.alpha])?.run(cfg.bootstrap_reps).remove(0);
    Ok(finish(obs, samples, cfg.gamma))
}

/// Combines individual tests that share bootstrap multipliers.
pub fn adaptive_pvalue(individual: Vec<IndividualTestResult>, cfg: &TestConfig) -> Result<AdaptiveTestResult> {
    let first = individual.first().ok_or_else(|| Error::input("adaptive test needs at least one individual test"))?;
    let b = first.bootstrap_samples.len();
    if b == 0 || individual.iter().any(|r| r.bootstrap_samples.len() != b) {
        return Err(Error::input("individual tests must share a nonzero number of bootstrap replicates"));
    }
    let mut order: Vec<usize> = (0..individual.len()).collect();
    order.sort_by(|&i, &j| individual[i].alpha.total_cmp(&individual[j].alpha));
    let mut best = order[0];
    for &i in &order {
        if individual[i].p_hat < individual[best].p_hat {
            best = i;
        }
    }
    let t_ad = individual[best].p_hat;

    // pseudo p-value of replicate b: #{b' != b: T^{b'} > T^b} / B
    let mut t_ad_boot = vec![f64::INFINITY; b];
    for res in &individual {
        let mut sorted = res.bootstrap_samples.clone();
        sorted.sort_by(f64::total_cmp);
        for (slot, &tb) in t_ad_boot.iter_mut().zip(&res.bootstrap_samples) {
            let greater = b - sorted.partition_point(|&v| v <= tb);
            *slot = slot.min(greater as f64 / b as f64);
        }
    }
    let p_ad = t_ad_boot.iter().filter(|&&v| v < t_ad).count() as f64 / (b + 1) as f64;
    Ok(AdaptiveTestResult {
        t_ad,
        p_ad,
        reject: p_ad <= cfg.gamma,
        alpha_star: individual[best].alpha,
        t_hat_ad: individual[best].t_hat,
        individual,
    })
}

/// Adaptive test with fitted models per weight, for warm starting nested windows.
pub(crate) fn run_adaptive_test_warm(
    data: &Dataset,
    cfg: &TestConfig,
    warm: Option<&[WeightedFit]>,
) -> Result<(AdaptiveTestResult, Vec<WeightedFit>)> {
    let cfg = checked(data, cfg)?;
    let alphas = cfg.alphas();
    if let Some(w) = warm {
        if w.len() != alphas.len() {
            return Err(Error::dims("one warm fit per weight is required"));
        }
    }
    let observed: Vec<Observed> = alphas
        .par_iter()
        .enumerate()
        .map(|(j, &a)| observe(data, &cfg.loss_spec(a), &cfg, warm.map(|w| &w[j])))
        .collect::<Result<_>>()?;
    let samples = BootstrapPlan::new(data.x(), &cfg, &alphas)?.run(cfg.bootstrap_reps);
    let mut fits = Vec::with_capacity(alphas.len());
    let individual = observed
        .into_iter()
        .zip(samples)
        .map(|(obs, s)| {
            fits.push(obs.fit.clone());
            finish(obs, s, cfg.gamma)
        })
        .collect();
    Ok((adaptive_pvalue(individual, &cfg)?, fits))
}

/// Individual tests for every weight in the set and their adaptive combination.
pub fn run_adaptive_test(data: &Dataset, cfg: &TestConfig) -> Result<AdaptiveTestResult> {
    run_adaptive_test_warm(data, cfg, None).map(|r| r.0)
}
