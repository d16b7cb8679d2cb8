//! Reference distributions: normal, chi-square, Student t and Fisher F.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use super::special::{beta_inc, beta_inc_complement, erfc, gamma_p, gamma_q, ln_beta, ln_gamma};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DistFamily {
    Normal,
    ChiSquare { df: f64 },
    StudentT { df: f64 },
    FisherF { df1: f64, df2: f64 },
}

impl DistFamily {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            DistFamily::Normal => true,
            DistFamily::ChiSquare { df } | DistFamily::StudentT { df } => df > 0.0 && df.is_finite(),
            DistFamily::FisherF { df1, df2 } => {
                df1 > 0.0 && df2 > 0.0 && df1.is_finite() && df2.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("degrees of freedom must be positive: {self:?}")))
        }
    }

    fn support_lower(&self) -> f64 {
        match self {
            DistFamily::Normal | DistFamily::StudentT { .. } => f64::NEG_INFINITY,
            _ => 0.0,
        }
    }
}

/// Cumulative distribution function.
pub fn dist_cdf(d: DistFamily, x: f64) -> Result<f64> {
    d.validate()?;
    if x.is_nan() {
        return Err(Error::Domain("cdf evaluated at NaN".into()));
    }
    Ok(match d {
        DistFamily::Normal => 0.5 * erfc(-x / SQRT_2),
        DistFamily::ChiSquare { df } => gamma_p(0.5 * df, 0.5 * x.max(0.0)),
        DistFamily::StudentT { df } => {
            let tail = 0.5 * beta_inc(0.5 * df, 0.5, df / (df + x * x));
            if x > 0.0 {
                1.0 - tail
            } else {
                tail
            }
        }
        DistFamily::FisherF { df1, df2 } => {
            if x <= 0.0 {
                0.0
            } else {
                beta_inc(0.5 * df1, 0.5 * df2, df1 * x / (df1 * x + df2))
            }
        }
    })
}

/// Survival function `1 - cdf(x)`, accurate in the upper tail.
pub fn dist_sf(d: DistFamily, x: f64) -> Result<f64> {
    d.validate()?;
    if x.is_nan() {
        return Err(Error::Domain("sf evaluated at NaN".into()));
    }
    Ok(match d {
        DistFamily::Normal => 0.5 * erfc(x / SQRT_2),
        DistFamily::ChiSquare { df } => gamma_q(0.5 * df, 0.5 * x.max(0.0)),
        DistFamily::StudentT { df } => {
            let tail = 0.5 * beta_inc(0.5 * df, 0.5, df / (df + x * x));
            if x > 0.0 {
                tail
            } else {
                1.0 - tail
            }
        }
        DistFamily::FisherF { df1, df2 } => {
            if x <= 0.0 {
                1.0
            } else {
                beta_inc_complement(0.5 * df1, 0.5 * df2, df1 * x / (df1 * x + df2))
            }
        }
    })
}

/// Two-sided tail probability `P(|X| >= |x|)` for the symmetric families.
pub fn two_sided_p(d: DistFamily, x: f64) -> Result<f64> {
    match d {
        DistFamily::Normal => Ok(erfc(x.abs() / SQRT_2)),
        DistFamily::StudentT { df } => {
            d.validate()?;
            Ok(beta_inc(0.5 * df, 0.5, df / (df + x * x)))
        }
        _ => Err(Error::Domain("two-sided p-value needs a symmetric family".into())),
    }
}

/// Probability density function.
pub fn dist_pdf(d: DistFamily, x: f64) -> Result<f64> {
    d.validate()?;
    Ok(match d {
        DistFamily::Normal => (-0.5 * x * x).exp() / (2.0 * PI).sqrt(),
        DistFamily::ChiSquare { df } => {
            if x <= 0.0 {
                0.0
            } else {
                let k = 0.5 * df;
                ((k - 1.0) * x.ln() - 0.5 * x - k * 2f64.ln() - ln_gamma(k)).exp()
            }
        }
        DistFamily::StudentT { df } => {
            let ln = -0.5 * (df + 1.0) * (1.0 + x * x / df).ln()
                - 0.5 * df.ln()
                - ln_beta(0.5 * df, 0.5);
            ln.exp()
        }
        DistFamily::FisherF { df1, df2 } => {
            if x <= 0.0 {
                0.0
            } else {
                let (a, b) = (0.5 * df1, 0.5 * df2);
                let ln = a * (df1 / df2).ln() + (a - 1.0) * x.ln()
                    - (a + b) * (1.0 + df1 * x / df2).ln()
                    - ln_beta(a, b);
                ln.exp()
            }
        }
    })
}

/// Quantile function: the `x` with `cdf(x) = q`, found by safeguarded
/// Newton steps inside a shrinking bisection bracket.
pub fn dist_quantile(d: DistFamily, q: f64) -> Result<f64> {
    d.validate()?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {q}")));
    }
    if let DistFamily::Normal | DistFamily::StudentT { .. } = d {
        if q == 0.5 {
            return Ok(0.0);
        }
    }
    let f = |x: f64| -> f64 { dist_cdf(d, x).expect("validated") - q };

    // Bracket the root.
    let (mut lo, mut hi) = if d.support_lower() == 0.0 {
        let mut hi = 1.0;
        while f(hi) < 0.0 {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(Error::Domain("quantile bracket overflow".into()));
            }
        }
        (0.0, hi)
    } else {
        let mut w = 1.0;
        while f(-w) > 0.0 || f(w) < 0.0 {
            w *= 2.0;
            if w > 1e300 {
                return Err(Error::Domain("quantile bracket overflow".into()));
            }
        }
        (-w, w)
    };

    let mut x = 0.5 * (lo + hi);
    for _ in 0..400 {
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = dist_pdf(d, x).expect("validated");
        let mut next = if dens > 0.0 && dens.is_finite() { x - fx / dens } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step <= 1e-15 * x.abs().max(1e-300) || hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1e-300) {
            break;
        }
    }
    Ok(x)
}
