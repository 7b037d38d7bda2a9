//! Error laws used by the scenarios and the SNR calculator.

use rand::Rng;
use rand_distr::{Cauchy as CauchyDraw, Distribution, Normal as NormalDraw, StudentT as StudentTDraw};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Cauchy, Continuous, ContinuousCDF, Laplace, Normal, StudentsT};

use crate::error::{Error, Result};

/// Centered, symmetric error distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum ErrorDist {
    Normal { sd: f64 },
    StudentT { df: f64 },
    Laplace { scale: f64 },
    Cauchy { scale: f64 },
}

impl ErrorDist {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ErrorDist::Normal { sd } => sd >= 0.0 && sd.is_finite(),
            ErrorDist::StudentT { df } => df > 0.0 && df.is_finite(),
            ErrorDist::Laplace { scale } | ErrorDist::Cauchy { scale } => scale > 0.0 && scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid error distribution parameters: {self:?}")))
        }
    }

    /// Short label, e.g. `t4` or `normal(0.7071)`.
    pub fn label(&self) -> String {
        match *self {
            ErrorDist::Normal { sd } => format!("normal({sd})"),
            ErrorDist::StudentT { df } => format!("t{df}"),
            ErrorDist::Laplace { scale } => format!("laplace({scale})"),
            ErrorDist::Cauchy { scale } => format!("cauchy({scale})"),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ErrorDist::Normal { sd } => {
                let z: f64 = NormalDraw::new(0.0, 1.0).expect("unit normal").sample(rng);
                sd * z
            }
            ErrorDist::StudentT { df } => StudentTDraw::new(df).expect("validated df").sample(rng),
            ErrorDist::Laplace { scale } => {
                let u: f64 = rng.random::<f64>() - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            ErrorDist::Cauchy { scale } => CauchyDraw::new(0.0, scale).expect("validated scale").sample(rng),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            ErrorDist::Normal { sd } => Normal::new(0.0, sd).expect("sd > 0").pdf(x),
            ErrorDist::StudentT { df } => StudentsT::new(0.0, 1.0, df).expect("df > 0").pdf(x),
            ErrorDist::Laplace { scale } => Laplace::new(0.0, scale).expect("scale > 0").pdf(x),
            ErrorDist::Cauchy { scale } => Cauchy::new(0.0, scale).expect("scale > 0").pdf(x),
        }
    }

    pub fn quantile(&self, tau: f64) -> f64 {
        if tau == 0.5 {
            return 0.0;
        }
        match *self {
            ErrorDist::Normal { sd } => Normal::new(0.0, sd).expect("sd > 0").inverse_cdf(tau),
            ErrorDist::StudentT { df } => StudentsT::new(0.0, 1.0, df).expect("df > 0").inverse_cdf(tau),
            ErrorDist::Laplace { scale } => {
                if tau < 0.5 {
                    scale * (2.0 * tau).ln()
                } else {
                    -scale * (2.0 - 2.0 * tau).ln()
                }
            }
            ErrorDist::Cauchy { scale } => scale * (std::f64::consts::PI * (tau - 0.5)).tan(),
        }
    }

    /// `Var(eps)`, `None` when infinite or undefined.
    pub fn variance(&self) -> Option<f64> {
        match *self {
            ErrorDist::Normal { sd } => Some(sd * sd),
            ErrorDist::StudentT { df } if df > 2.0 => Some(df / (df - 2.0)),
            ErrorDist::StudentT { .. } => None,
            ErrorDist::Laplace { scale } => Some(2.0 * scale * scale),
            ErrorDist::Cauchy { .. } => None,
        }
    }

    /// Partial first moment `E[eps 1{eps <= b}]`, `None` without a finite mean.
    pub fn partial_moment(&self, b: f64) -> Option<f64> {
        match *self {
            ErrorDist::Normal { sd } => {
                if sd == 0.0 {
                    return Some(0.0);
                }
                Some(-sd * Normal::new(0.0, 1.0).expect("unit normal").pdf(b / sd))
            }
            ErrorDist::Laplace { scale } => Some(if b <= 0.0 {
                0.5 * (b - scale) * (b / scale).exp()
            } else {
                -0.5 * (b + scale) * (-b / scale).exp()
            }),
            ErrorDist::StudentT { df } if df > 1.0 => Some(student_t_partial_moment(df, b)),
            ErrorDist::StudentT { .. } | ErrorDist::Cauchy { .. } => None,
        }
    }
}

/// `int_{-inf}^b x f(x) dx` by double-exponential quadrature after mapping
/// the upper tail onto `[0, 1)` with `x = a + (1 - u)^-m - 1`; `m` is chosen
/// so that the transformed integrand vanishes at `u = 1`.
fn student_t_partial_moment(df: f64, b: f64) -> f64 {
    let law = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    let m = (2.0 / (df - 1.0)).max(1.0);
    // the law is symmetric and centered, so E[eps 1{eps <= b}] equals
    // -E[eps 1{eps > |b|}]
    let a = b.abs();
    let tail = quadrature::double_exponential::integrate(
        |u: f64| {
            if u >= 1.0 {
                return 0.0;
            }
            let w = (1.0 - u).powf(-m);
            let x = a + w - 1.0;
            x * law.pdf(x) * m * w / (1.0 - u)
        },
        0.0,
        1.0,
        1e-13,
    )
    .integral;
    -tail
}
