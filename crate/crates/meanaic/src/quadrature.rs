//! Gauss–Hermite quadrature, plus the mode-centered adaptive transform used
//! for marginalizing a scalar random effect.

use crate::num::{cast, Scalar};

/// Nodes and weights for ∫ e^{−x²} f(x) dx ≈ Σ wᵢ f(xᵢ) (physicists'
/// convention), with log-scale weight adjustments precomputed for the
/// adaptive transform.
#[derive(Debug, Clone)]
pub struct GaussHermite<F> {
    pub nodes: Vec<F>,
    pub weights: Vec<F>,
    /// ln(wᵢ) + xᵢ², the log weight after dividing out the Gaussian kernel.
    log_adjusted: Vec<F>,
}

impl<F: Scalar> GaussHermite<F> {
    /// Compute an n-point rule by Newton iteration on the Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature needs at least one node");
        let mut nodes = vec![F::zero(); n];
        let mut weights = vec![F::zero(); n];
        // π^{-1/4}, the normalization of the orthonormal Hermite recurrence.
        let pim4: F = cast(0.751_125_544_464_942_5);
        let eps = F::epsilon() * cast(100.0);
        let nf = cast::<F>(n as f64);

        let m = n.div_ceil(2);
        let mut z = F::zero();
        for i in 0..m {
            // Initial guesses, largest root first.
            z = match i {
                0 => {
                    let a = (cast::<F>(2.0) * nf + F::one()).sqrt();
                    a - cast::<F>(1.85575) * (cast::<F>(2.0) * nf + F::one()).powf(cast(-1.0 / 6.0))
                }
                1 => z - cast::<F>(1.14) * nf.powf(cast(0.426)) / z,
                2 => cast::<F>(1.86) * z - cast::<F>(0.86) * nodes[0],
                3 => cast::<F>(1.91) * z - cast::<F>(0.91) * nodes[1],
                _ => cast::<F>(2.0) * z - nodes[i - 2],
            };
            let mut pp = F::zero();
            for _ in 0..200 {
                // Evaluate the orthonormal Hermite polynomial at z.
                let mut p1 = pim4;
                let mut p2 = F::zero();
                for j in 1..=n {
                    let jf = cast::<F>(j as f64);
                    let p3 = p2;
                    p2 = p1;
                    p1 = z * (cast::<F>(2.0) / jf).sqrt() * p2
                        - ((jf - F::one()) / jf).sqrt() * p3;
                }
                pp = (cast::<F>(2.0) * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= eps {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = cast::<F>(2.0) / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        // Ascending order reads more naturally.
        nodes.reverse();
        weights.reverse();
        let log_adjusted = nodes
            .iter()
            .zip(&weights)
            .map(|(&x, &w)| w.ln() + x * x)
            .collect();
        Self { nodes, weights, log_adjusted }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// log ∫ f(b) db for a log-concave-ish integrand given its mode and the
/// curvature scale sd = (−d²/db² log f at the mode)^{−1/2}:
///
///   ∫ f(b) db ≈ √2·sd · Σᵢ wᵢ e^{xᵢ²} f(mode + √2·sd·xᵢ)
///
/// evaluated in log space.
pub fn adaptive_log_integral<F: Scalar>(
    rule: &GaussHermite<F>,
    mode: F,
    sd: F,
    mut log_f: impl FnMut(F) -> F,
) -> F {
    let sqrt2 = cast::<F>(std::f64::consts::SQRT_2);
    let scale = sqrt2 * sd;
    let mut terms: Vec<F> = Vec::with_capacity(rule.len());
    let mut max = F::neg_infinity();
    for (i, &x) in rule.nodes.iter().enumerate() {
        let t = rule.log_adjusted[i] + log_f(mode + scale * x);
        if t > max {
            max = t;
        }
        terms.push(t);
    }
    if !max.is_finite() {
        return F::neg_infinity();
    }
    let mut sum = F::zero();
    for t in terms {
        sum += (t - max).exp();
    }
    scale.ln() + max + sum.ln()
}
