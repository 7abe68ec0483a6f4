//! Per-cluster GLM fitting via Fisher scoring (IRLS for canonical links) and
//! the cluster-level summaries consumed by two-step methods: the coefficient
//! estimates, the maximized (average) log-likelihood, and the Hessian of the
//! average log-likelihood.

use crate::criterion::ModelSpec;
use crate::data::ClusterData;
use crate::error::{Error, Result};
use crate::family::Family;
use crate::linalg::{solve_sym_psd, SymSolve};
use crate::num::{cast, Scalar};
use ndarray::{Array1, Array2};

/// Iteration controls for the scoring loop.
#[derive(Debug, Clone, Copy)]
pub struct FitControl<F> {
    pub max_iter: usize,
    /// Convergence requires the max absolute score component, on the
    /// average-log-likelihood scale, to fall below this.
    pub score_tol: F,
    /// Convergence also requires the relative deviance change to fall below
    /// this.
    pub deviance_tol: F,
    /// Any |β_k| beyond this during Poisson/Bernoulli iteration is treated
    /// as divergence (complete separation).
    pub divergence_bound: F,
    /// Rank tolerance relative to the leading pivot of the weighted normal
    /// equations.
    pub rank_tol: F,
}

impl<F: Scalar> Default for FitControl<F> {
    fn default() -> Self {
        Self {
            max_iter: 50,
            score_tol: cast(1e-6),
            deviance_tol: cast(1e-8),
            divergence_bound: cast(30.0),
            rank_tol: cast(1e-10),
        }
    }
}

/// The cluster-level summaries produced by a single GLM fit.
#[derive(Debug, Clone)]
pub struct ClusterFit<F> {
    /// Observation count n_i.
    pub n: usize,
    /// Coefficient estimates for the active columns, intercept first.
    pub beta: Array1<F>,
    /// Maximized average log-likelihood (per-observation scale).
    pub max_avg_loglik: F,
    /// Hessian of the average log-likelihood at `beta`.
    pub hessian: Array2<F>,
    pub converged: bool,
    pub iterations: usize,
}

impl<F: Scalar> ClusterFit<F> {
    /// Maximized log-likelihood on the sum scale, derived as n · ℓ̄.
    pub fn max_loglik(&self) -> F {
        cast::<F>(self.n as f64) * self.max_avg_loglik
    }
}

/// AIC of a single cluster fit: −2·logL + 2·p_effective.
pub fn cluster_aic<F: Scalar>(fit: &ClusterFit<F>, p_effective: usize) -> F {
    cast::<F>(-2.0) * fit.max_loglik() + cast::<F>(2.0) * cast::<F>(p_effective as f64)
}

/// Fit one cluster by Fisher scoring.
///
/// Returns `converged = false` with the best iterate when the iteration cap
/// is hit; rank-deficient designs and diverging coefficient paths are
/// errors.
pub fn fit_cluster<F: Scalar>(
    data: &ClusterData<F>,
    model: &ModelSpec,
    ctrl: &FitControl<F>,
) -> Result<ClusterFit<F>> {
    data.validate_response(model.family)?;
    let x = active_design(data, model)?;
    let n = data.n();
    let p = x.ncols();
    if n < p {
        return Err(Error::TooFewObservations { n, p });
    }
    let fam = model.family;
    let canon = data.canonical_rows();
    let y = data.response();

    let mut beta: Array1<F> = Array1::zeros(p);
    beta[0] = intercept_start(fam, &y.to_owned(), canon);

    let mut best: Option<(F, Array1<F>)> = None;
    let mut prev_dev: Option<F> = None;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..ctrl.max_iter {
        iterations += 1;
        let eta = x.dot(&beta);

        // Weighted normal equations, accumulated in canonical row order.
        let mut a: Array2<F> = Array2::zeros((p, p));
        let mut rhs: Array1<F> = Array1::zeros(p);
        for &j in canon {
            let mu = fam.inv_link(eta[j]);
            let w = fam.variance(mu);
            let z = w * eta[j] + (y[j] - mu);
            for r in 0..p {
                let xr = x[[j, r]];
                rhs[r] += xr * z;
                for c in 0..=r {
                    a[[r, c]] += w * xr * x[[j, c]];
                }
            }
        }
        for r in 0..p {
            for c in (r + 1)..p {
                a[[r, c]] = a[[c, r]];
            }
        }

        let next = match solve_sym_psd(&a, &rhs, ctrl.rank_tol) {
            SymSolve::Solution(b) => b,
            SymSolve::RankDeficient(cols) => {
                return Err(Error::DegenerateDesign {
                    columns: map_design_columns(model, &cols),
                })
            }
        };
        if next.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFiniteIterate {
                detail: format!("non-finite coefficients in cluster {:?}", data.id()),
            });
        }
        if fam != Family::Gaussian {
            if let Some(worst) = next.iter().map(|b| b.abs()).fold(None, max_opt) {
                if worst > ctrl.divergence_bound {
                    return Err(Error::NonFiniteIterate {
                        detail: format!(
                            "|beta| reached {worst} in cluster {:?} (separation or unbounded likelihood)",
                            data.id()
                        ),
                    });
                }
            }
        }
        beta = next;

        let ll = loglik_at(&x, data, fam, &beta)?;
        if best.as_ref().map_or(true, |(b, _)| ll > *b) {
            best = Some((ll, beta.clone()));
        }
        let dev = cast::<F>(-2.0) * ll;
        let score = avg_score_at(&x, data, fam, &beta)?;
        let score_ok = score.iter().fold(F::zero(), |m, s| m.max(s.abs())) < ctrl.score_tol;
        let dev_ok = match prev_dev {
            Some(pd) => (dev - pd).abs() / (dev.abs() + cast(0.1)) < ctrl.deviance_tol,
            None => false,
        };
        prev_dev = Some(dev);
        if score_ok && dev_ok {
            converged = true;
            break;
        }
    }

    let (ll, beta) = match (converged, best) {
        (true, _) => (loglik_at(&x, data, fam, &beta)?, beta),
        (false, Some((ll, b))) => (ll, b),
        (false, None) => unreachable!("at least one iteration ran"),
    };
    let hessian = avg_hessian_at(&x, data, fam, &beta)?;
    Ok(ClusterFit {
        n,
        beta,
        max_avg_loglik: ll / cast(n as f64),
        hessian,
        converged,
        iterations,
    })
}

/// Sum-scale log-likelihood Σⱼ log f(yⱼ; β), exact including constant terms.
/// The Gaussian family profiles its variance at the given β.
pub fn loglik<F: Scalar>(data: &ClusterData<F>, model: &ModelSpec, beta: &Array1<F>) -> Result<F> {
    let x = active_design(data, model)?;
    check_beta_len(&x, beta)?;
    loglik_at(&x, data, model.family, beta)
}

/// Score of the average log-likelihood at β (gradient of ℓ̄).
pub fn avg_score<F: Scalar>(
    data: &ClusterData<F>,
    model: &ModelSpec,
    beta: &Array1<F>,
) -> Result<Array1<F>> {
    let x = active_design(data, model)?;
    check_beta_len(&x, beta)?;
    avg_score_at(&x, data, model.family, beta)
}

fn check_beta_len<F: Scalar>(x: &Array2<F>, beta: &Array1<F>) -> Result<()> {
    if beta.len() != x.ncols() {
        return Err(Error::invalid_input(format!(
            "beta has length {}, expected {}",
            beta.len(),
            x.ncols()
        )));
    }
    Ok(())
}

fn loglik_at<F: Scalar>(
    x: &Array2<F>,
    data: &ClusterData<F>,
    fam: Family,
    beta: &Array1<F>,
) -> Result<F> {
    let y = data.response();
    let eta = x.dot(beta);
    let phi = profiled_dispersion(x, data, fam, &eta)?;
    let mut ll = F::zero();
    for &j in data.canonical_rows() {
        ll += fam.log_density(y[j], eta[j], phi);
    }
    if !ll.is_finite() {
        return Err(Error::NonFiniteIterate {
            detail: format!("non-finite log-likelihood in cluster {:?}", data.id()),
        });
    }
    Ok(ll)
}

fn avg_score_at<F: Scalar>(
    x: &Array2<F>,
    data: &ClusterData<F>,
    fam: Family,
    beta: &Array1<F>,
) -> Result<Array1<F>> {
    let y = data.response();
    let eta = x.dot(beta);
    let phi = profiled_dispersion(x, data, fam, &eta)?;
    let p = x.ncols();
    let mut s: Array1<F> = Array1::zeros(p);
    for &j in data.canonical_rows() {
        let resid = (y[j] - fam.inv_link(eta[j])) / phi;
        for r in 0..p {
            s[r] += x[[j, r]] * resid;
        }
    }
    Ok(s / cast(data.n() as f64))
}

fn avg_hessian_at<F: Scalar>(
    x: &Array2<F>,
    data: &ClusterData<F>,
    fam: Family,
    beta: &Array1<F>,
) -> Result<Array2<F>> {
    let eta = x.dot(beta);
    let phi = profiled_dispersion(x, data, fam, &eta)?;
    let p = x.ncols();
    let mut h: Array2<F> = Array2::zeros((p, p));
    for &j in data.canonical_rows() {
        let w = fam.variance(fam.inv_link(eta[j])) / phi;
        for r in 0..p {
            for c in 0..=r {
                h[[r, c]] -= w * x[[j, r]] * x[[j, c]];
            }
        }
    }
    for r in 0..p {
        for c in (r + 1)..p {
            h[[r, c]] = h[[c, r]];
        }
    }
    Ok(h / cast(data.n() as f64))
}

/// For Gaussian fits the dispersion is the maximum-likelihood variance
/// RSS/n at the given β; the discrete families use 1.
fn profiled_dispersion<F: Scalar>(
    _x: &Array2<F>,
    data: &ClusterData<F>,
    fam: Family,
    eta: &Array1<F>,
) -> Result<F> {
    if fam != Family::Gaussian {
        return Ok(F::one());
    }
    let y = data.response();
    let mut rss = F::zero();
    for &j in data.canonical_rows() {
        let r = y[j] - eta[j];
        rss += r * r;
    }
    let s2 = rss / cast(data.n() as f64);
    if !(s2 > F::zero()) {
        return Err(Error::NonFiniteIterate {
            detail: format!("profiled Gaussian variance is zero in cluster {:?}", data.id()),
        });
    }
    Ok(s2)
}

/// Gather the intercept plus the active covariate columns.
fn active_design<F: Scalar>(data: &ClusterData<F>, model: &ModelSpec) -> Result<Array2<F>> {
    let r = data.n_covariates();
    for &c in &model.active_columns {
        if c == 0 || c > r {
            return Err(Error::invalid_input(format!(
                "model {:?} references covariate column {c}, dataset has columns 1..={r}",
                model.label
            )));
        }
    }
    let n = data.n();
    let p = model.active_columns.len() + 1;
    let x = data.design();
    let mut out = Array2::zeros((n, p));
    for j in 0..n {
        out[[j, 0]] = F::one();
        for (k, &c) in model.active_columns.iter().enumerate() {
            out[[j, k + 1]] = x[[j, c]];
        }
    }
    Ok(out)
}

/// Map active-design column indices back to dataset column indices.
fn map_design_columns(model: &ModelSpec, cols: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = cols
        .iter()
        .map(|&k| if k == 0 { 0 } else { model.active_columns[k - 1] })
        .collect();
    out.sort_unstable();
    out
}

fn intercept_start<F: Scalar>(fam: Family, y: &Array1<F>, canon: &[usize]) -> F {
    let n = cast::<F>(y.len() as f64);
    let mut sum = F::zero();
    for &j in canon {
        sum += y[j];
    }
    match fam {
        // g(ȳ) nudged into the link domain
        Family::Poisson => ((sum + cast(0.5)) / n).ln(),
        Family::Bernoulli => {
            let p = (sum + cast(0.5)) / (n + F::one());
            (p / (F::one() - p)).ln()
        }
        Family::Gaussian => sum / n,
    }
}

fn max_opt<F: Scalar>(acc: Option<F>, v: F) -> Option<F> {
    Some(match acc {
        Some(a) => a.max(v),
        None => v,
    })
}
