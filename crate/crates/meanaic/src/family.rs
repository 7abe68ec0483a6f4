//! Exponential-family response distributions with their canonical links.
//!
//! Each family binds the link `g`, its inverse, the unit variance function,
//! and the per-observation log density. Log densities keep every constant
//! term (`log y!`, `log 2π`, ...) so that information-criterion values are
//! comparable across implementations.

use crate::num::{cast, Scalar};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Counts with log link.
    Poisson,
    /// Binary responses with logit link.
    Bernoulli,
    /// Continuous responses with identity link and a profiled variance.
    Gaussian,
}

/// How the dispersion parameter is handled when counting AIC parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dispersion {
    FixedAtOne,
    Profiled,
}

impl Family {
    pub fn dispersion(self) -> Dispersion {
        match self {
            Family::Poisson | Family::Bernoulli => Dispersion::FixedAtOne,
            Family::Gaussian => Dispersion::Profiled,
        }
    }

    /// Number of non-regression parameters counted by AIC (the profiled
    /// Gaussian variance).
    pub fn extra_params(self) -> usize {
        match self.dispersion() {
            Dispersion::FixedAtOne => 0,
            Dispersion::Profiled => 1,
        }
    }

    /// Canonical link g(μ).
    pub fn link<F: Scalar>(self, mu: F) -> F {
        match self {
            Family::Poisson => mu.ln(),
            Family::Bernoulli => (mu / (F::one() - mu)).ln(),
            Family::Gaussian => mu,
        }
    }

    /// Inverse link g⁻¹(η).
    pub fn inv_link<F: Scalar>(self, eta: F) -> F {
        match self {
            Family::Poisson => eta.exp(),
            Family::Bernoulli => {
                // 1/(1+e^{-η}), stable on both tails
                if eta >= F::zero() {
                    F::one() / (F::one() + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (F::one() + e)
                }
            }
            Family::Gaussian => eta,
        }
    }

    /// Unit variance function V(μ).
    pub fn variance<F: Scalar>(self, mu: F) -> F {
        match self {
            Family::Poisson => mu,
            Family::Bernoulli => mu * (F::one() - mu),
            Family::Gaussian => F::one(),
        }
    }

    /// Per-observation log density at linear predictor `eta`, including all
    /// constants. `phi` is the dispersion; it is ignored by Poisson and
    /// Bernoulli and is σ² for Gaussian.
    pub fn log_density<F: Scalar>(self, y: F, eta: F, phi: F) -> F {
        match self {
            // y·η − e^η − ln Γ(y+1)
            Family::Poisson => y * eta - eta.exp() - (y + F::one()).ln_gamma(),
            // y·η − ln(1+e^η)
            Family::Bernoulli => y * eta - softplus(eta),
            // −½ ln(2πσ²) − (y−η)²/(2σ²)
            Family::Gaussian => {
                let two = cast::<F>(2.0);
                let r = y - eta;
                -(cast::<F>(2.0 * std::f64::consts::PI) * phi).ln() / two - r * r / (two * phi)
            }
        }
    }

    /// Validate a single response value for this family.
    pub fn valid_response<F: Scalar>(self, y: F) -> bool {
        if !y.is_finite() {
            return false;
        }
        match self {
            Family::Poisson => y >= F::zero() && y.fract() == F::zero(),
            Family::Bernoulli => y == F::zero() || y == F::one(),
            Family::Gaussian => true,
        }
    }

    pub fn response_requirement(self) -> &'static str {
        match self {
            Family::Poisson => "a non-negative integer",
            Family::Bernoulli => "0 or 1",
            Family::Gaussian => "a finite number",
        }
    }
}

/// ln(1 + e^x) without overflow.
fn softplus<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Poisson => write!(f, "poisson"),
            Family::Bernoulli => write!(f, "bernoulli"),
            Family::Gaussian => write!(f, "gaussian"),
        }
    }
}

impl FromStr for Family {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "poisson" => Ok(Family::Poisson),
            "bernoulli" | "binomial" => Ok(Family::Bernoulli),
            "gaussian" | "normal" => Ok(Family::Gaussian),
            other => Err(crate::error::Error::Config {
                message: format!("unknown family {other:?} (expected poisson, bernoulli or gaussian)"),
            }),
        }
    }
}
