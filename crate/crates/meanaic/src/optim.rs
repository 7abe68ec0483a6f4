//! Derivative-free minimization for the marginal-likelihood surface.
//!
//! A plain Nelder–Mead simplex with one restart is plenty for the low
//! dimensions involved here (a handful of fixed effects plus one variance on
//! the log scale).

use crate::num::{cast, Scalar};

#[derive(Debug, Clone)]
pub struct OptimResult<F> {
    pub x: Vec<F>,
    pub fx: F,
    pub evals: usize,
    pub converged: bool,
}

/// Minimize `f` starting from `x0` with per-coordinate initial simplex
/// steps. Convergence is declared when the simplex function spread falls
/// below `ftol` relative to the best value.
pub fn nelder_mead<F: Scalar>(
    mut f: impl FnMut(&[F]) -> F,
    x0: &[F],
    steps: &[F],
    ftol: F,
    max_evals: usize,
) -> OptimResult<F> {
    assert_eq!(x0.len(), steps.len());
    let mut evals = 0usize;
    let mut best = run_simplex(&mut f, x0, steps, ftol, max_evals, &mut evals);
    if !best.1 {
        return OptimResult { x: best.0 .1, fx: best.0 .0, evals, converged: false };
    }
    // Restart once from the found optimum with a tighter simplex; guards
    // against premature collapse along a poorly scaled direction.
    let shrunk: Vec<F> = steps.iter().map(|&s| s * cast(0.1)).collect();
    let second = run_simplex(&mut f, &best.0 .1, &shrunk, ftol, max_evals, &mut evals);
    if second.0 .0 < best.0 .0 {
        best = second;
    }
    OptimResult { x: best.0 .1, fx: best.0 .0, evals, converged: best.1 }
}

type SimplexOutcome<F> = ((F, Vec<F>), bool);

fn run_simplex<F: Scalar>(
    f: &mut impl FnMut(&[F]) -> F,
    x0: &[F],
    steps: &[F],
    ftol: F,
    max_evals: usize,
    evals: &mut usize,
) -> SimplexOutcome<F> {
    let dim = x0.len();
    let mut eval = |x: &[F], evals: &mut usize| -> F {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            F::infinity()
        } else {
            v
        }
    };

    let mut simplex: Vec<(F, Vec<F>)> = Vec::with_capacity(dim + 1);
    simplex.push((eval(x0, evals), x0.to_vec()));
    for d in 0..dim {
        let mut x = x0.to_vec();
        x[d] += steps[d];
        simplex.push((eval(&x, evals), x));
    }

    let (alpha, gamma, rho, sigma) = (cast::<F>(1.0), cast::<F>(2.0), cast::<F>(0.5), cast::<F>(0.5));
    let mut converged = false;

    while *evals < max_evals {
        simplex.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        let spread = simplex[dim].0 - simplex[0].0;
        if spread <= ftol * (F::one() + simplex[0].0.abs()) {
            converged = true;
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![F::zero(); dim];
        for v in &simplex[..dim] {
            for d in 0..dim {
                centroid[d] += v.1[d];
            }
        }
        for c in centroid.iter_mut() {
            *c /= cast(dim as f64);
        }

        let worst = simplex[dim].clone();
        let reflected: Vec<F> = (0..dim)
            .map(|d| centroid[d] + alpha * (centroid[d] - worst.1[d]))
            .collect();
        let fr = eval(&reflected, evals);

        if fr < simplex[0].0 {
            let expanded: Vec<F> = (0..dim)
                .map(|d| centroid[d] + gamma * (reflected[d] - centroid[d]))
                .collect();
            let fe = eval(&expanded, evals);
            simplex[dim] = if fe < fr { (fe, expanded) } else { (fr, reflected) };
        } else if fr < simplex[dim - 1].0 {
            simplex[dim] = (fr, reflected);
        } else {
            let contracted: Vec<F> = (0..dim)
                .map(|d| centroid[d] + rho * (worst.1[d] - centroid[d]))
                .collect();
            let fc = eval(&contracted, evals);
            if fc < worst.0 {
                simplex[dim] = (fc, contracted);
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].1.clone();
                for v in simplex.iter_mut().skip(1) {
                    for d in 0..dim {
                        v.1[d] = best[d] + sigma * (v.1[d] - best[d]);
                    }
                    v.0 = eval(&v.1.clone(), evals);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    (simplex[0].clone(), converged)
}

/// Central-difference gradient with per-coordinate step `h`.
pub fn numerical_gradient<F: Scalar>(
    mut f: impl FnMut(&[F]) -> F,
    x: &[F],
    h: F,
) -> Vec<F> {
    let mut g = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for d in 0..x.len() {
        let orig = xp[d];
        xp[d] = orig + h;
        let fp = f(&xp);
        xp[d] = orig - h;
        let fm = f(&xp);
        xp[d] = orig;
        g.push((fp - fm) / (cast::<F>(2.0) * h));
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn minimizes_shifted_quadratic() {
        let f = |x: &[f64]| (x[0] - 1.5).powi(2) + 3.0 * (x[1] + 0.5).powi(2) + 2.0;
        let r = nelder_mead(f, &[0.0, 0.0], &[0.5, 0.5], 1e-12, 2000);
        assert!(r.converged);
        assert_relative_eq!(r.x[0], 1.5, epsilon = 1e-5);
        assert_relative_eq!(r.x[1], -0.5, epsilon = 1e-5);
        assert_relative_eq!(r.fx, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn minimizes_banana_valley() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 20.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(f, &[-1.0, 1.0], &[0.4, 0.4], 1e-13, 6000);
        assert!(r.fx < 1e-8, "fx = {}", r.fx);
        assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-3);
    }

    #[test]
    fn survives_infinite_regions() {
        // Infinite values outside the feasible region must not poison the
        // simplex.
        let f = |x: &[f64]| if x[0] < 0.0 { f64::INFINITY } else { (x[0] - 0.3).powi(2) };
        let r = nelder_mead(f, &[0.5], &[0.4], 1e-12, 1000);
        assert_relative_eq!(r.x[0], 0.3, epsilon = 1e-5);
    }

    #[test]
    fn gradient_matches_analytic() {
        let f = |x: &[f64]| x[0].powi(2) + x[0] * x[1] + x[1].exp();
        let g = numerical_gradient(f, &[0.7, -0.2], 1e-6);
        assert_relative_eq!(g[0], 2.0 * 0.7 - 0.2, epsilon = 1e-7);
        assert_relative_eq!(g[1], 0.7 + (-0.2f64).exp(), epsilon = 1e-7);
    }
}
