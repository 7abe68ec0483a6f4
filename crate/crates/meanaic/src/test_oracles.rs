//! Independent reference computations used by the test suites.
//!
//! Nothing here touches the scoring/quadrature code paths it is used to
//! check: log densities are evaluated term by term, optima are located by
//! grid search, and the linear-mixed-model marginal likelihood is the
//! closed-form multivariate normal.

use crate::criterion::ModelSpec;
use crate::data::ClusterData;
use ndarray::Array1;

/// Direct evaluation of the model log-likelihood at `beta` (unit
/// dispersion), bypassing the fitting code.
pub fn direct_loglik(data: &ClusterData<f64>, model: &ModelSpec, beta: &[f64]) -> f64 {
    let x = data.design();
    let y = data.response();
    let mut ll = 0.0;
    for j in 0..data.n() {
        let mut eta = beta[0];
        for (k, &c) in model.active_columns.iter().enumerate() {
            eta += beta[k + 1] * x[[j, c]];
        }
        ll += model.family.log_density(y[j], eta, 1.0);
    }
    ll
}

/// Maximum-likelihood estimate located by a dense grid search over
/// `[lo, hi]^p` at resolution `step`, for p ∈ {1, 2}.
///
/// The exponential-family log-likelihood is concave in β, so a coarse pass
/// followed by a fine pass around the coarse optimum visits the same global
/// optimum the full dense grid would.
pub fn grid_search_mle(
    data: &ClusterData<f64>,
    model: &ModelSpec,
    lo: f64,
    hi: f64,
    step: f64,
) -> Vec<f64> {
    let p = model.active_columns.len() + 1;
    assert!(p == 1 || p == 2, "grid oracle supports 1 or 2 parameters");
    let coarse = 0.05;
    let c = grid_pass(data, model, &vec![(lo, hi); p], coarse);
    let window: Vec<(f64, f64)> = c
        .iter()
        .map(|&v| ((v - 2.0 * coarse).max(lo), (v + 2.0 * coarse).min(hi)))
        .collect();
    grid_pass(data, model, &window, step)
}

fn grid_pass(
    data: &ClusterData<f64>,
    model: &ModelSpec,
    bounds: &[(f64, f64)],
    step: f64,
) -> Vec<f64> {
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| {
            let count = ((hi - lo) / step).round() as usize;
            (0..=count).map(|k| lo + step * k as f64).collect()
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, vec![0.0; bounds.len()]);
    match axes.len() {
        1 => {
            for &b0 in &axes[0] {
                let ll = direct_loglik(data, model, &[b0]);
                if ll > best.0 {
                    best = (ll, vec![b0]);
                }
            }
        }
        2 => {
            for &b0 in &axes[0] {
                for &b1 in &axes[1] {
                    let ll = direct_loglik(data, model, &[b0, b1]);
                    if ll > best.0 {
                        best = (ll, vec![b0, b1]);
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    best.1
}

/// Closed-form marginal log-likelihood of a Gaussian random-intercept model
/// with unit residual variance: per cluster, y ~ N(Xβ, I + σ₀²·11ᵀ).
/// Evaluated with the Sherman–Morrison identity.
pub fn lmm_marginal_loglik(
    clusters: &[ClusterData<f64>],
    model: &ModelSpec,
    beta: &Array1<f64>,
    sigma0_sq: f64,
) -> f64 {
    let mut total = 0.0;
    for data in clusters {
        let n = data.n() as f64;
        let x = data.design();
        let y = data.response();
        let mut rss = 0.0;
        let mut rsum = 0.0;
        for j in 0..data.n() {
            let mut eta = beta[0];
            for (k, &c) in model.active_columns.iter().enumerate() {
                eta += beta[k + 1] * x[[j, c]];
            }
            let r = y[j] - eta;
            rss += r * r;
            rsum += r;
        }
        let denom = 1.0 + n * sigma0_sq;
        let quad = rss - sigma0_sq / denom * rsum * rsum;
        total += -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + denom.ln() + quad);
    }
    total
}
