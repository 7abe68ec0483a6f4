//! Scalar abstraction for the numeric core.
//!
//! Everything in the fitting and criterion code is generic over [`Scalar`],
//! which is `num_traits::Float` plus the few extras the likelihood code
//! needs. `f64` is the instantiation used by the harness and the CLI; `f32`
//! is available for callers that want it.

use num_traits::{Float, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};

pub trait Scalar:
    Float + FromPrimitive + NumAssign + Debug + Display + Send + Sync + 'static
{
    /// Natural log of the gamma function, used for the `log y!` terms of
    /// count densities.
    fn ln_gamma(self) -> Self;
}

impl Scalar for f64 {
    fn ln_gamma(self) -> f64 {
        statrs::function::gamma::ln_gamma(self)
    }
}

impl Scalar for f32 {
    fn ln_gamma(self) -> f32 {
        statrs::function::gamma::ln_gamma(self as f64) as f32
    }
}

/// Shorthand for pulling f64 literals into the generic scalar type.
#[inline]
pub(crate) fn cast<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("f64 literal representable in scalar type")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_matches_factorials() {
        // ln Γ(n+1) = ln n!
        assert!((5.0f64.ln_gamma() - 24.0f64.ln()).abs() < 1e-12);
        assert!((1.0f64.ln_gamma()).abs() < 1e-15);
        assert!((4.0f32.ln_gamma() - 6.0f32.ln()).abs() < 1e-5);
    }
}
