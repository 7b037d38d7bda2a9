//! Scaled-form ADMM iterations for the penalized objective.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{soft_threshold, Face, Problem};

/// Prox of `scale * rho_tau` at `v`.
#[inline]
fn check_prox(v: f64, scale: f64, tau: f64) -> f64 {
    if v > scale * tau {
        v - scale * tau
    } else if v < -scale * (1.0 - tau) {
        v + scale * (1.0 - tau)
    } else {
        0.0
    }
}

pub(super) struct Residuals {
    pub(super) pri: f64,
    pub(super) dual: f64,
    pub(super) e_pri: f64,
    pub(super) e_dual: f64,
}

/// ADMM state in scaled-dual form. `u`, `w` are stored `k * m + i`.
pub(super) struct Admm {
    pub(super) rho: f64,
    beta: DVector<f64>,
    pub(super) b: Vec<f64>,
    pub(super) z: DVector<f64>,
    pub(super) u: Vec<f64>,
    u_prev: Vec<f64>,
    z_prev: DVector<f64>,
    w: Vec<f64>,
    v: DVector<f64>,
    xb: DVector<f64>,
    prox_in: Vec<f64>,
    col_sums: DVector<f64>,
    xty: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl Admm {
    pub(super) fn new(prob: &Problem, beta: DVector<f64>, b: Vec<f64>, rho: f64) -> Self {
        let (m, k) = (prob.m, prob.k);
        let gram = prob.x.tr_mul(prob.x);
        let col_sums = prob.x.row_sum().transpose();
        let xty = prob.x.tr_mul(prob.y);
        let xb = prob.x * &beta;
        let mut u = vec![0.0; m * k];
        if prob.has_quantile {
            for kk in 0..k {
                for i in 0..m {
                    u[kk * m + i] = prob.y[i] - xb[i] - b[kk];
                }
            }
        }
        let chol = Self::factor(prob, &gram, &col_sums, rho);
        Self {
            rho,
            z: beta.clone(),
            z_prev: beta.clone(),
            beta,
            b,
            u_prev: u.clone(),
            prox_in: u.clone(),
            u,
            w: vec![0.0; m * k],
            v: DVector::zeros(prob.p),
            xb,
            col_sums,
            xty,
            chol,
        }
    }

    fn factor(prob: &Problem, gram: &DMatrix<f64>, col_sums: &DVector<f64>, rho: f64) -> Cholesky<f64, Dyn> {
        let p = prob.p;
        let mut a = gram * prob.alpha;
        if prob.has_quantile {
            let kf = prob.k as f64;
            let mf = prob.m as f64;
            a += gram * (rho * kf);
            a -= (col_sums * col_sums.transpose()) * (rho * kf / mf);
        }
        for j in 0..p {
            a[(j, j)] += rho;
        }
        // The matrix is positive definite by construction; a tiny ridge
        // absorbs rounding in the centered Gram term.
        Cholesky::new(a.clone()).unwrap_or_else(|| {
            let mut a = a;
            for j in 0..p {
                a[(j, j)] += 1e-10 * (1.0 + rho);
            }
            Cholesky::new(a).expect("regularized ADMM system is positive definite")
        })
    }

    pub(super) fn step(&mut self, prob: &Problem) {
        let (m, k) = (prob.m, prob.k);
        let rho = self.rho;
        // (beta, b) update
        let mut rhs = &self.xty * prob.alpha + (&self.z - &self.v) * rho;
        if prob.has_quantile {
            let mut qsum = DVector::<f64>::zeros(m);
            let mut qtot = vec![0.0; k];
            for kk in 0..k {
                let mut tot = 0.0;
                for i in 0..m {
                    let q = prob.y[i] - self.u[kk * m + i] - self.w[kk * m + i];
                    qsum[i] += q;
                    tot += q;
                }
                qtot[kk] = tot;
            }
            let all: f64 = qtot.iter().sum();
            rhs.gemv_tr(rho, prob.x, &qsum, 1.0);
            rhs.axpy(-rho * all / m as f64, &self.col_sums, 1.0);
            self.chol.solve_mut(&mut rhs);
            self.beta = rhs;
            let sb = self.col_sums.dot(&self.beta);
            for kk in 0..k {
                self.b[kk] = (qtot[kk] - sb) / m as f64;
            }
        } else {
            self.chol.solve_mut(&mut rhs);
            self.beta = rhs;
        }
        self.xb.gemv(1.0, prob.x, &self.beta, 0.0);

        // u update
        if prob.has_quantile {
            std::mem::swap(&mut self.u, &mut self.u_prev);
            let scale = prob.c / rho;
            for kk in 0..k {
                let tau = prob.taus[kk];
                let bk = self.b[kk];
                for i in 0..m {
                    let idx = kk * m + i;
                    let vin = prob.y[i] - self.xb[i] - bk - self.w[idx];
                    self.prox_in[idx] = vin;
                    self.u[idx] = check_prox(vin, scale, tau);
                }
            }
        }

        // z update
        std::mem::swap(&mut self.z, &mut self.z_prev);
        let thr = prob.pen / rho;
        for j in 0..prob.p {
            self.z[j] = soft_threshold(self.beta[j] + self.v[j], thr);
        }

        // dual updates
        if prob.has_quantile {
            for kk in 0..k {
                let bk = self.b[kk];
                for i in 0..m {
                    let idx = kk * m + i;
                    self.w[idx] += self.xb[i] + bk + self.u[idx] - prob.y[i];
                }
            }
        }
        self.v += &self.beta - &self.z;
    }

    /// Primal/dual residual norms and their stopping thresholds.
    pub(super) fn residuals(&self, prob: &Problem, eps: f64) -> Residuals {
        let (m, k, p) = (prob.m, prob.k, prob.p);
        let mut pri2 = 0.0;
        let mut ax2 = 0.0;
        let mut bz2 = 0.0;
        let mut c2 = 0.0;
        let mut du_sum = DVector::<f64>::zeros(m);
        let mut du_tot = vec![0.0; k];
        let mut w_sum = DVector::<f64>::zeros(m);
        let mut w_tot = vec![0.0; k];
        if prob.has_quantile {
            for kk in 0..k {
                for i in 0..m {
                    let idx = kk * m + i;
                    let fit = self.xb[i] + self.b[kk];
                    let r = fit + self.u[idx] - prob.y[i];
                    pri2 += r * r;
                    ax2 += fit * fit;
                    bz2 += self.u[idx] * self.u[idx];
                    c2 += prob.y[i] * prob.y[i];
                    let du = self.u[idx] - self.u_prev[idx];
                    du_sum[i] += du;
                    du_tot[kk] += du;
                    w_sum[i] += self.w[idx];
                    w_tot[kk] += self.w[idx];
                }
            }
        }
        let bz = &self.beta - &self.z;
        pri2 += bz.norm_squared();
        ax2 += self.beta.norm_squared();
        bz2 += self.z.norm_squared();

        let mut dual = prob.x.tr_mul(&du_sum);
        dual -= &self.z - &self.z_prev;
        let mut dual2 = dual.norm_squared() + du_tot.iter().map(|v| v * v).sum::<f64>();
        dual2 *= self.rho * self.rho;

        let mut aty = prob.x.tr_mul(&w_sum);
        aty += &self.v;
        let aty2 = aty.norm_squared() + w_tot.iter().map(|v| v * v).sum::<f64>();

        let n_con = if prob.has_quantile { m * k + p } else { p };
        let n_var = if prob.has_quantile { p + k } else { p };
        let pri_scale = ax2.max(bz2).max(c2).sqrt();
        let dual_scale = self.rho * aty2.sqrt();
        Residuals {
            pri: pri2.sqrt(),
            dual: dual2.sqrt(),
            e_pri: (n_con as f64).sqrt() * eps + eps * pri_scale,
            e_dual: (n_var as f64).sqrt() * eps + eps * dual_scale,
        }
    }

    /// Support of `z` and kink pattern of `u`, which determine the polish system.
    pub(super) fn face(&self) -> Face {
        let sign = |v: f64| -> i8 {
            if v > 0.0 {
                1
            } else if v < 0.0 {
                -1
            } else {
                0
            }
        };
        Face { beta_sign: self.z.iter().map(|v| sign(*v)).collect(), state: self.u.iter().map(|v| sign(*v)).collect() }
    }

    /// Check-loss subgradients certified by the last prox step.
    pub(super) fn prox_subgradients(&self, prob: &Problem) -> Vec<f64> {
        if !prob.has_quantile {
            return Vec::new();
        }
        let scale = self.rho / prob.c;
        self.prox_in.iter().zip(&self.u).map(|(vin, u)| (vin - u) * scale).collect()
    }
}
