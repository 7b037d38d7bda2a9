//! Primal-dual interior point method (Mehrotra predictor-corrector).
//!
//! The objective is written as a quadratic program over nonnegative
//! variables: `beta = bp - bm` and, for every `(i, k)`, the residual
//! `y_i - b_k - x_i'beta = xp_ik - xm_ik`. Eliminating the diagonal blocks
//! leaves a `(p + K)`-dimensional positive definite Newton system whose only
//! dense part is one weighted Gram matrix per iteration.

use nalgebra::{DMatrix, DVector};

use super::{Face, Problem};

/// Iterate of the interior point method. Residual-split vectors are stored
/// `k * m + i`; `nu` is the multiplier of the residual constraints.
pub(super) struct Ipm {
    bp: DVector<f64>,
    bm: DVector<f64>,
    zp: DVector<f64>,
    zm: DVector<f64>,
    xp: Vec<f64>,
    xm: Vec<f64>,
    sp: Vec<f64>,
    sm: Vec<f64>,
    nu: Vec<f64>,
    b: Vec<f64>,
    gram: Option<DMatrix<f64>>,
    pub(super) mu0: f64,
}

struct Residuals {
    rd_bp: DVector<f64>,
    rd_bm: DVector<f64>,
    rd_xp: Vec<f64>,
    rd_xm: Vec<f64>,
    rp: Vec<f64>,
    rb: Vec<f64>,
}

/// Complementarity targets for one Newton solve.
struct Targets {
    bp: DVector<f64>,
    bm: DVector<f64>,
    xp: Vec<f64>,
    xm: Vec<f64>,
}

struct Direction {
    bp: DVector<f64>,
    bm: DVector<f64>,
    zp: DVector<f64>,
    zm: DVector<f64>,
    xp: Vec<f64>,
    xm: Vec<f64>,
    sp: Vec<f64>,
    sm: Vec<f64>,
    nu: Vec<f64>,
    b: Vec<f64>,
}

fn max_step<'a>(v: impl Iterator<Item = (&'a f64, &'a f64)>) -> f64 {
    let mut step = f64::INFINITY;
    for (x, dx) in v {
        if *dx < 0.0 {
            step = step.min(-x / dx);
        }
    }
    step
}

impl Ipm {
    pub(super) fn new(prob: &Problem) -> Self {
        let (m, p, k) = (prob.m, prob.p, prob.k);
        let y = prob.y.as_slice();
        let b: Vec<f64> = if prob.has_quantile {
            prob.taus.iter().map(|t| super::empirical_quantile(y, *t)).collect()
        } else {
            Vec::new()
        };
        let nk = if prob.has_quantile { m * k } else { 0 };
        let mut xp = vec![0.0; nk];
        let mut xm = vec![0.0; nk];
        let mut nu = vec![0.0; nk];
        let mut sp = vec![0.0; nk];
        let mut sm = vec![0.0; nk];
        for kk in 0..if prob.has_quantile { k } else { 0 } {
            let tau = prob.taus[kk];
            for i in 0..m {
                let idx = kk * m + i;
                let r = y[i] - b[kk];
                xp[idx] = r.max(0.0) + 1.0;
                xm[idx] = (-r).max(0.0) + 1.0;
                nu[idx] = prob.c * (tau - 0.5);
                sp[idx] = prob.c * 0.5;
                sm[idx] = prob.c * 0.5;
            }
        }
        let zinit = prob.pen.max(1.0);
        let gram = (prob.alpha > 0.0).then(|| prob.x.tr_mul(prob.x));
        let mut ipm = Self {
            bp: DVector::from_element(p, 1.0),
            bm: DVector::from_element(p, 1.0),
            zp: DVector::from_element(p, zinit),
            zm: DVector::from_element(p, zinit),
            xp,
            xm,
            sp,
            sm,
            nu,
            b,
            gram,
            mu0: 0.0,
        };
        ipm.mu0 = ipm.mu();
        ipm
    }

    fn pairs(&self) -> usize {
        2 * self.bp.len() + 2 * self.xp.len()
    }

    pub(super) fn mu(&self) -> f64 {
        let mut s = self.bp.dot(&self.zp) + self.bm.dot(&self.zm);
        for i in 0..self.xp.len() {
            s += self.xp[i] * self.sp[i] + self.xm[i] * self.sm[i];
        }
        s / self.pairs() as f64
    }

    pub(super) fn beta(&self) -> DVector<f64> {
        &self.bp - &self.bm
    }

    pub(super) fn intercepts(&self) -> Vec<f64> {
        self.b.clone()
    }

    /// Sign pattern read off the strictly complementary split: a variable
    /// counts as active when it dominates its bound multiplier.
    pub(super) fn face(&self) -> Face {
        let beta_sign = (0..self.bp.len())
            .map(|j| {
                if self.bp[j] > self.zp[j] && self.bp[j] > self.bm[j] {
                    1
                } else if self.bm[j] > self.zm[j] {
                    -1
                } else {
                    0
                }
            })
            .collect();
        let state = (0..self.xp.len())
            .map(|i| {
                if self.xp[i] > self.sp[i] && self.xp[i] > self.xm[i] {
                    1
                } else if self.xm[i] > self.sm[i] {
                    -1
                } else {
                    0
                }
            })
            .collect();
        Face { beta_sign, state }
    }

    fn residuals(&self, prob: &Problem) -> Residuals {
        let (m, k) = (prob.m, prob.k);
        let beta = self.beta();
        let xb = prob.x * &beta;
        let resid = DVector::from_fn(m, |i, _| xb[i] - prob.y[i]);
        let mut grad_quad = prob.x.tr_mul(&resid);
        grad_quad *= prob.alpha;
        let mut rp = vec![0.0; self.xp.len()];
        let mut rd_xp = vec![0.0; self.xp.len()];
        let mut rd_xm = vec![0.0; self.xp.len()];
        let mut rb = vec![0.0; self.b.len()];
        let mut nu_sum = DVector::<f64>::zeros(m);
        if prob.has_quantile {
            for kk in 0..k {
                let tau = prob.taus[kk];
                for i in 0..m {
                    let idx = kk * m + i;
                    rp[idx] = self.xp[idx] - self.xm[idx] + self.b[kk] + resid[i];
                    rd_xp[idx] = prob.c * tau - self.nu[idx] - self.sp[idx];
                    rd_xm[idx] = prob.c * (1.0 - tau) + self.nu[idx] - self.sm[idx];
                    nu_sum[i] += self.nu[idx];
                    rb[kk] -= self.nu[idx];
                }
            }
        }
        let xnu = prob.x.tr_mul(&nu_sum);
        let rd_bp = DVector::from_fn(prob.p, |j, _| grad_quad[j] + prob.pen - xnu[j] - self.zp[j]);
        let rd_bm = DVector::from_fn(prob.p, |j, _| -grad_quad[j] + prob.pen + xnu[j] - self.zm[j]);
        Residuals { rd_bp, rd_bm, rd_xp, rd_xm, rp, rb }
    }

    /// One predictor-corrector step. Returns `false` on numerical breakdown.
    pub(super) fn step(&mut self, prob: &Problem) -> bool {
        let (m, p, k) = (prob.m, prob.p, if prob.has_quantile { prob.k } else { 0 });
        let nk = self.xp.len();
        let res = self.residuals(prob);

        let dp = self.zp.component_div(&self.bp);
        let dm = self.zm.component_div(&self.bm);
        let einv = DVector::from_fn(p, |j, _| 1.0 / (1.0 / dp[j] + 1.0 / dm[j]));
        let cdp: Vec<f64> = (0..nk).map(|i| self.sp[i] / self.xp[i]).collect();
        let cdm: Vec<f64> = (0..nk).map(|i| self.sm[i] / self.xm[i]).collect();
        let w: Vec<f64> = (0..nk).map(|i| 1.0 / (1.0 / cdp[i] + 1.0 / cdm[i])).collect();

        // Newton matrix on (dbeta, db)
        let dim = p + k;
        let mut mat = DMatrix::<f64>::zeros(dim, dim);
        let mut wsum = vec![0.0; m];
        for kk in 0..k {
            for i in 0..m {
                wsum[i] += w[kk * m + i];
            }
        }
        {
            let scaled = DMatrix::from_fn(m, p, |i, j| prob.x[(i, j)] * wsum[i].sqrt());
            let wg = scaled.tr_mul(&scaled);
            mat.view_mut((0, 0), (p, p)).copy_from(&wg);
        }
        if let Some(g) = &self.gram {
            let mut tl = mat.view_mut((0, 0), (p, p));
            tl += g * prob.alpha;
        }
        for j in 0..p {
            mat[(j, j)] += einv[j];
        }
        for kk in 0..k {
            let wk = DVector::from_column_slice(&w[kk * m..(kk + 1) * m]);
            let col = prob.x.tr_mul(&wk);
            for j in 0..p {
                mat[(j, p + kk)] = col[j];
                mat[(p + kk, j)] = col[j];
            }
            mat[(p + kk, p + kk)] = wk.sum();
        }
        let chol = match mat.cholesky() {
            Some(c) => c,
            None => return false,
        };

        let solve = |t: &Targets| -> Direction {
            let rhs_bp = DVector::from_fn(p, |j, _| -res.rd_bp[j] - t.bp[j] / self.bp[j]);
            let rhs_bm = DVector::from_fn(p, |j, _| -res.rd_bm[j] - t.bm[j] / self.bm[j]);
            let rhs_xp: Vec<f64> = (0..nk).map(|i| -res.rd_xp[i] - t.xp[i] / self.xp[i]).collect();
            let rhs_xm: Vec<f64> = (0..nk).map(|i| -res.rd_xm[i] - t.xm[i] / self.xm[i]).collect();
            let g: Vec<f64> = (0..nk).map(|i| -res.rp[i] - rhs_xp[i] / cdp[i] + rhs_xm[i] / cdm[i]).collect();
            let mut wg_sum = DVector::<f64>::zeros(m);
            let mut rhs = DVector::<f64>::zeros(dim);
            for kk in 0..k {
                let mut bsum = 0.0;
                for i in 0..m {
                    let v = w[kk * m + i] * g[kk * m + i];
                    wg_sum[i] += v;
                    bsum += v;
                }
                rhs[p + kk] = bsum - res.rb[kk];
            }
            let xwg = prob.x.tr_mul(&wg_sum);
            for j in 0..p {
                rhs[j] = einv[j] * (rhs_bp[j] / dp[j] - rhs_bm[j] / dm[j]) + xwg[j];
            }
            let sol = chol.solve(&rhs);
            let dbeta = sol.rows(0, p).into_owned();
            let db: Vec<f64> = (0..k).map(|kk| sol[p + kk]).collect();
            let xdb = prob.x * &dbeta;
            let mut dnu = vec![0.0; nk];
            for kk in 0..k {
                for i in 0..m {
                    let idx = kk * m + i;
                    dnu[idx] = w[idx] * (g[idx] - db[kk] - xdb[i]);
                }
            }
            let tt = DVector::from_fn(p, |j, _| einv[j] * (dbeta[j] - rhs_bp[j] / dp[j] + rhs_bm[j] / dm[j]));
            let dbp = DVector::from_fn(p, |j, _| (rhs_bp[j] + tt[j]) / dp[j]);
            let dbm = DVector::from_fn(p, |j, _| (rhs_bm[j] - tt[j]) / dm[j]);
            let dxp: Vec<f64> = (0..nk).map(|i| (rhs_xp[i] + dnu[i]) / cdp[i]).collect();
            let dxm: Vec<f64> = (0..nk).map(|i| (rhs_xm[i] - dnu[i]) / cdm[i]).collect();
            let dzp = DVector::from_fn(p, |j, _| (-t.bp[j] - self.zp[j] * dbp[j]) / self.bp[j]);
            let dzm = DVector::from_fn(p, |j, _| (-t.bm[j] - self.zm[j] * dbm[j]) / self.bm[j]);
            let dsp: Vec<f64> = (0..nk).map(|i| (-t.xp[i] - self.sp[i] * dxp[i]) / self.xp[i]).collect();
            let dsm: Vec<f64> = (0..nk).map(|i| (-t.xm[i] - self.sm[i] * dxm[i]) / self.xm[i]).collect();
            Direction { bp: dbp, bm: dbm, zp: dzp, zm: dzm, xp: dxp, xm: dxm, sp: dsp, sm: dsm, nu: dnu, b: db }
        };

        // predictor
        let affine = Targets {
            bp: self.bp.component_mul(&self.zp),
            bm: self.bm.component_mul(&self.zm),
            xp: (0..nk).map(|i| self.xp[i] * self.sp[i]).collect(),
            xm: (0..nk).map(|i| self.xm[i] * self.sm[i]).collect(),
        };
        let aff = solve(&affine);
        let (ap, ad) = self.step_lengths(&aff);
        let mu = self.mu();
        let mut mu_aff = 0.0;
        for j in 0..p {
            mu_aff += (self.bp[j] + ap * aff.bp[j]) * (self.zp[j] + ad * aff.zp[j]);
            mu_aff += (self.bm[j] + ap * aff.bm[j]) * (self.zm[j] + ad * aff.zm[j]);
        }
        for i in 0..nk {
            mu_aff += (self.xp[i] + ap * aff.xp[i]) * (self.sp[i] + ad * aff.sp[i]);
            mu_aff += (self.xm[i] + ap * aff.xm[i]) * (self.sm[i] + ad * aff.sm[i]);
        }
        mu_aff /= self.pairs() as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
        let target = sigma * mu;

        // corrector
        let corr = Targets {
            bp: DVector::from_fn(p, |j, _| affine.bp[j] + aff.bp[j] * aff.zp[j] - target),
            bm: DVector::from_fn(p, |j, _| affine.bm[j] + aff.bm[j] * aff.zm[j] - target),
            xp: (0..nk).map(|i| affine.xp[i] + aff.xp[i] * aff.sp[i] - target).collect(),
            xm: (0..nk).map(|i| affine.xm[i] + aff.xm[i] * aff.sm[i] - target).collect(),
        };
        let dir = solve(&corr);
        let (mut ap, mut ad) = self.step_lengths(&dir);
        ap = (0.995 * ap).min(1.0);
        ad = (0.995 * ad).min(1.0);
        if prob.alpha > 0.0 {
            // the quadratic couples primal and dual steps
            let a = ap.min(ad);
            ap = a;
            ad = a;
        }
        if !(ap > 0.0 && ad > 0.0) {
            return false;
        }
        self.bp.axpy(ap, &dir.bp, 1.0);
        self.bm.axpy(ap, &dir.bm, 1.0);
        self.zp.axpy(ad, &dir.zp, 1.0);
        self.zm.axpy(ad, &dir.zm, 1.0);
        for i in 0..nk {
            self.xp[i] += ap * dir.xp[i];
            self.xm[i] += ap * dir.xm[i];
            self.sp[i] += ad * dir.sp[i];
            self.sm[i] += ad * dir.sm[i];
            self.nu[i] += ad * dir.nu[i];
        }
        for kk in 0..k {
            self.b[kk] += ap * dir.b[kk];
        }
        self.bp.iter().chain(self.zp.iter()).chain(self.b.iter()).all(|v| v.is_finite())
    }

    fn step_lengths(&self, d: &Direction) -> (f64, f64) {
        let primal = max_step(self.bp.iter().zip(d.bp.iter()))
            .min(max_step(self.bm.iter().zip(d.bm.iter())))
            .min(max_step(self.xp.iter().zip(&d.xp)))
            .min(max_step(self.xm.iter().zip(&d.xm)));
        let dual = max_step(self.zp.iter().zip(d.zp.iter()))
            .min(max_step(self.zm.iter().zip(d.zm.iter())))
            .min(max_step(self.sp.iter().zip(&d.sp)))
            .min(max_step(self.sm.iter().zip(&d.sm)));
        (primal.min(1.0), dual.min(1.0))
    }
}
