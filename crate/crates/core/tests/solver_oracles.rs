//! Closed-form and enumeration oracles for the penalized solver.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tailcp::solver::{objective, Engine};
use tailcp::{fit_weighted_lasso, Dataset, SolverConfig, WeightedLossSpec};

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Least absolute deviation with intercept, p = 1: some optimum interpolates
/// two observations, so scanning all pairs finds the minimum.
fn lad_pair_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let obj = |b: f64, beta: f64| -> f64 {
        x.iter().zip(y).map(|(xi, yi)| 0.5 * (yi - b - beta * xi).abs()).sum::<f64>() / n as f64
    };
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            if (x[i] - x[j]).abs() < 1e-14 {
                continue;
            }
            let beta = (y[i] - y[j]) / (x[i] - x[j]);
            let b = y[i] - beta * x[i];
            best = best.min(obj(b, beta));
        }
    }
    best
}

#[test]
fn least_squares_matches_normal_equations_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let spec = WeightedLossSpec::new(1.0, vec![0.5]).unwrap();
    for _ in 0..20 {
        let n = rng.random_range(30..80);
        let p = rng.random_range(1..8);
        let x = DMatrix::from_fn(n, p, |_, _| gaussian(&mut rng));
        let y = DVector::from_fn(n, |_, _| gaussian(&mut rng));
        let ols = x.tr_mul(&x).cholesky().unwrap().solve(&x.tr_mul(&y));
        let data = Dataset::new(x, y).unwrap();
        let fit = fit_weighted_lasso(&data, &spec, 0.0, &SolverConfig::default()).unwrap();
        let err = fit.beta_hat.iter().zip(ols.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-6, "L-inf error {err}");
        assert!(fit.converged);
    }
}

#[test]
fn median_regression_matches_pair_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let spec = WeightedLossSpec::new(0.0, vec![0.5]).unwrap();
    for _ in 0..20 {
        let n = 2 * rng.random_range(10..30) + 1;
        let xs: Vec<f64> = (0..n).map(|_| gaussian(&mut rng)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.7 * x + gaussian(&mut rng)).collect();
        let oracle = lad_pair_oracle(&xs, &ys);
        let data = Dataset::new(DMatrix::from_column_slice(n, 1, &xs), DVector::from_vec(ys)).unwrap();
        let fit = fit_weighted_lasso(&data, &spec, 0.0, &SolverConfig::default()).unwrap();
        let obj = objective(&data, &spec, &fit.b_hat, &fit.beta_hat, 0.0).unwrap();
        assert!((obj - oracle).abs() <= 1e-8, "solver {obj} oracle {oracle}");
        assert!(fit.converged);
    }
}

#[test]
fn high_dimensional_windows_converge() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, p) = (200, 50);
    let x = DMatrix::from_fn(n, p, |_, _| gaussian(&mut rng));
    let y = DVector::from_fn(n, |i, _| x[(i, 0)] + x[(i, 1)] + gaussian(&mut rng));
    let data = Dataset::new(x, y).unwrap();
    let lam = tailcp::solver::lambda_for_window(n, p, 1.0);
    for alpha in [0.0, 0.1, 0.5, 0.9, 1.0] {
        let spec = WeightedLossSpec::new(alpha, vec![0.5]).unwrap();
        let fit = fit_weighted_lasso(&data, &spec, lam, &SolverConfig::default()).unwrap();
        assert!(fit.converged);
    }
}

#[test]
fn converges_across_shapes_scales_and_tails() {
    let cases = [
        (200, 50, 1.0, 0.0),
        (100, 50, 1.0, 0.0),
        (400, 50, 1.0, 0.0),
        (200, 100, 1.0, 0.0),
        (200, 50, 10.0, 0.0),
        (200, 50, 1.0, 2.0),
        (60, 50, 1.0, 0.0),
    ];
    for (n, p, scale, tdf) in cases {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(n, p, |_, _| gaussian(&mut rng));
        let y = DVector::from_fn(n, |i, _| {
            let e = if tdf > 0.0 {
                let z: f64 = gaussian(&mut rng);
                let c: f64 = rng.sample(rand_distr::ChiSquared::new(tdf).unwrap());
                z / (c / tdf).sqrt()
            } else {
                gaussian(&mut rng)
            };
            scale * (x[(i, 0)] + x[(i, 1)] + e)
        });
        let data = Dataset::new(x, y).unwrap();
        let lam = tailcp::solver::lambda_for_window(n, p, 0.5);
        for alpha in [0.0, 0.1, 0.5, 0.9, 1.0] {
            for taus in [vec![0.5], vec![0.2, 0.4, 0.6, 0.8]] {
                let spec = WeightedLossSpec::new(alpha, taus).unwrap();
                let fit = fit_weighted_lasso(&data, &spec, lam, &SolverConfig::default()).unwrap();
                assert!(fit.converged, "n={n} p={p} scale={scale} t={tdf} alpha={alpha}: kkt {}", fit.kkt_residual);
            }
        }
    }
}

#[test]
fn admm_engine_reaches_the_same_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (n, p) = (120, 20);
    let x = DMatrix::from_fn(n, p, |_, _| gaussian(&mut rng));
    let y = DVector::from_fn(n, |i, _| 2.0 * x[(i, 3)] + gaussian(&mut rng));
    let data = Dataset::new(x, y).unwrap();
    let lam = tailcp::solver::lambda_for_window(n, p, 0.5);
    let admm = SolverConfig { engine: Engine::Admm, admm_rho: 10.0, ..SolverConfig::default() };
    for alpha in [0.0, 0.5, 1.0] {
        let spec = WeightedLossSpec::new(alpha, vec![0.3, 0.7]).unwrap();
        let a = fit_weighted_lasso(&data, &spec, lam, &admm).unwrap();
        let b = fit_weighted_lasso(&data, &spec, lam, &SolverConfig::default()).unwrap();
        assert!(a.converged && b.converged, "alpha={alpha}");
        assert!((a.objective - b.objective).abs() < 1e-9, "alpha={alpha}");
    }
}
