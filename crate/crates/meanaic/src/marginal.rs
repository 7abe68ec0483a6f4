//! Marginal AIC baseline: maximum likelihood for a random-intercept GLMM,
//! with the random effect integrated out by adaptive Gauss–Hermite
//! quadrature (each cluster integral recentered at its conditional mode and
//! rescaled by the curvature there).
//!
//! The random-effect structure is fixed to an intercept: it is the only
//! specification shared by every mixed-effects submodel, which is what makes
//! the baseline comparable across the candidate lattice.

use crate::criterion::{pick_best, ModelScore, ModelSpec, SelectionReport};
use crate::data::ClusterData;
use crate::error::{Error, Result};
use crate::family::Family;
use crate::glm::{fit_cluster, FitControl};
use crate::num::{cast, Scalar};
use crate::optim::nelder_mead;
use crate::quadrature::{adaptive_log_integral, GaussHermite};
use ndarray::{Array1, Array2};
use rayon::prelude::*;

/// Default adaptive quadrature order.
pub const DEFAULT_NODES: usize = 15;

/// Variance estimates below this are treated as boundary (zero) solutions.
pub const BOUNDARY_SIGMA_SQ: f64 = 1e-6;

/// Log-variance bounds for the optimizer.
const LOG_SIGMA_SQ_RANGE: (f64, f64) = (-16.0, 6.0);

/// Result of a marginal random-intercept fit.
#[derive(Debug, Clone)]
pub struct MarginalFit<F> {
    /// Fixed-effect estimates, intercept first.
    pub beta: Array1<F>,
    /// Random-intercept variance estimate (zero at the boundary).
    pub sigma0_sq: F,
    pub marginal_loglik: F,
    /// −2·logL + 2·(p + 1), counting the fixed effects and σ₀².
    pub m_aic: F,
    pub quadrature_nodes: usize,
    pub converged: bool,
    /// Set when the variance estimate collapsed to the boundary.
    pub boundary: bool,
}

/// Cluster log-likelihood as a function of the random intercept b, at fixed
/// fixed-effect predictor η. Poisson collapses to three sufficient scalars;
/// the other families evaluate observation by observation.
enum InterceptLoglik<'a, F: Scalar> {
    Poisson { constant: F, y_sum: F, exp_eta_sum: F },
    General { family: Family, eta: Array1<F>, data: &'a ClusterData<F> },
}

impl<'a, F: Scalar> InterceptLoglik<'a, F> {
    fn build(data: &'a ClusterData<F>, x: &Array2<F>, family: Family, beta: &Array1<F>) -> Self {
        let eta = x.dot(beta);
        if family == Family::Poisson {
            let y = data.response();
            let mut constant = F::zero();
            let mut y_sum = F::zero();
            let mut exp_eta_sum = F::zero();
            for &j in data.canonical_rows() {
                constant += y[j] * eta[j] - (y[j] + F::one()).ln_gamma();
                y_sum += y[j];
                exp_eta_sum += eta[j].exp();
            }
            InterceptLoglik::Poisson { constant, y_sum, exp_eta_sum }
        } else {
            InterceptLoglik::General { family, eta, data }
        }
    }

    #[cfg(test)]
    fn build_general(
        data: &'a ClusterData<F>,
        x: &Array2<F>,
        family: Family,
        beta: &Array1<F>,
    ) -> Self {
        InterceptLoglik::General { family, eta: x.dot(beta), data }
    }

    fn value(&self, b: F) -> F {
        match self {
            // Σ y(η+b) − e^b Σ e^η − Σ ln Γ(y+1)
            InterceptLoglik::Poisson { constant, y_sum, exp_eta_sum } => {
                *constant + *y_sum * b - b.exp() * *exp_eta_sum
            }
            InterceptLoglik::General { family, eta, data } => {
                let y = data.response();
                let mut ll = F::zero();
                for &j in data.canonical_rows() {
                    ll += family.log_density(y[j], eta[j] + b, F::one());
                }
                ll
            }
        }
    }

    /// dℓ/db; for canonical links this is Σ (y − μ).
    fn d1(&self, b: F) -> F {
        match self {
            InterceptLoglik::Poisson { y_sum, exp_eta_sum, .. } => {
                *y_sum - b.exp() * *exp_eta_sum
            }
            InterceptLoglik::General { family, eta, data } => {
                let y = data.response();
                let mut s = F::zero();
                for &j in data.canonical_rows() {
                    s += y[j] - family.inv_link(eta[j] + b);
                }
                s
            }
        }
    }

    /// d²ℓ/db² (non-positive); −Σ V(μ) for canonical links.
    fn d2(&self, b: F) -> F {
        match self {
            InterceptLoglik::Poisson { exp_eta_sum, .. } => -(b.exp() * *exp_eta_sum),
            InterceptLoglik::General { family, eta, data } => {
                let mut s = F::zero();
                for &j in data.canonical_rows() {
                    s -= family.variance(family.inv_link(eta[j] + b));
                }
                s
            }
        }
    }
}

/// Newton search (with step halving) for the mode of the conditional
/// posterior Q(b) = ℓ(b) − b²/(2σ²); returns the mode and the curvature
/// scale 1/√(−Q'').
fn conditional_mode<F: Scalar>(ll: &InterceptLoglik<'_, F>, sigma_sq: F) -> Option<(F, F)> {
    let q = |b: F| ll.value(b) - b * b / (cast::<F>(2.0) * sigma_sq);
    let mut b = F::zero();
    let mut qb = q(b);
    if !qb.is_finite() {
        return None;
    }
    for _ in 0..100 {
        let g = ll.d1(b) - b / sigma_sq;
        let h = -ll.d2(b) + F::one() / sigma_sq;
        if !(h > F::zero()) || !g.is_finite() {
            return None;
        }
        let mut step = g / h;
        let mut bn = b + step;
        let mut qn = q(bn);
        let mut halvings = 0;
        while !(qn >= qb) && halvings < 60 {
            step = step / cast(2.0);
            bn = b + step;
            qn = q(bn);
            halvings += 1;
        }
        if halvings == 60 {
            // Cannot improve: already at the optimum up to rounding.
            break;
        }
        b = bn;
        qb = qn;
        if step.abs() <= cast::<F>(1e-11) * (F::one() + b.abs()) {
            break;
        }
    }
    let h = -ll.d2(b) + F::one() / sigma_sq;
    let g = ll.d1(b) - b / sigma_sq;
    // Accept when the gradient is negligible against the curvature scale.
    if g.abs() <= cast::<F>(1e-5) * (F::one() + h) {
        Some((b, (F::one() / h).sqrt()))
    } else {
        None
    }
}

fn cluster_log_marginal<F: Scalar>(
    data: &ClusterData<F>,
    ll: &InterceptLoglik<'_, F>,
    sigma_sq: F,
    rule: &GaussHermite<F>,
) -> Result<F> {
    if sigma_sq == F::zero() {
        return Ok(ll.value(F::zero()));
    }
    let (mode, sd) = conditional_mode(ll, sigma_sq).ok_or_else(|| Error::QuadratureModeFailure {
        cluster: data.id().to_string(),
    })?;
    let two_pi = cast::<F>(2.0 * std::f64::consts::PI);
    let log_phi_norm = (two_pi * sigma_sq).ln() / cast(2.0);
    let log_t = |b: F| ll.value(b) - b * b / (cast::<F>(2.0) * sigma_sq) - log_phi_norm;
    Ok(adaptive_log_integral(rule, mode, sd, log_t))
}

fn active_designs<F: Scalar>(data: &[ClusterData<F>], model: &ModelSpec) -> Result<Vec<Array2<F>>> {
    data.iter()
        .map(|c| {
            let r = c.n_covariates();
            for &col in &model.active_columns {
                if col == 0 || col > r {
                    return Err(Error::invalid_input(format!(
                        "model {:?} references covariate column {col}, dataset has columns 1..={r}",
                        model.label
                    )));
                }
            }
            let mut x = Array2::ones((c.n(), model.active_columns.len() + 1));
            for j in 0..c.n() {
                for (k, &col) in model.active_columns.iter().enumerate() {
                    x[[j, k + 1]] = c.design()[[j, col]];
                }
            }
            Ok(x)
        })
        .collect()
}

fn validate_marginal_args<F: Scalar>(sigma0_sq: F, nodes: usize, p: usize, beta: &Array1<F>) -> Result<()> {
    if sigma0_sq < F::zero() {
        return Err(Error::invalid_input("sigma0_sq must be non-negative"));
    }
    if nodes == 0 {
        return Err(Error::invalid_input("quadrature needs at least one node"));
    }
    if beta.len() != p {
        return Err(Error::invalid_input(format!(
            "beta has length {}, expected {p}",
            beta.len()
        )));
    }
    Ok(())
}

/// Marginal log-likelihood Σᵢ log ∫ Πⱼ f(yᵢⱼ; β, b) φ(b; 0, σ₀²) db.
pub fn marginal_loglik<F: Scalar>(
    data: &[ClusterData<F>],
    model: &ModelSpec,
    beta: &Array1<F>,
    sigma0_sq: F,
    nodes: usize,
) -> Result<F> {
    Ok(marginal_loglik_by_cluster(data, model, beta, sigma0_sq, nodes)?
        .into_iter()
        .fold(F::zero(), |a, b| a + b))
}

/// Per-cluster contributions to [`marginal_loglik`], in cluster order.
pub fn marginal_loglik_by_cluster<F: Scalar>(
    data: &[ClusterData<F>],
    model: &ModelSpec,
    beta: &Array1<F>,
    sigma0_sq: F,
    nodes: usize,
) -> Result<Vec<F>> {
    validate_marginal_args(sigma0_sq, nodes, model.active_columns.len() + 1, beta)?;
    let designs = active_designs(data, model)?;
    let rule = GaussHermite::new(nodes);
    data.iter()
        .zip(&designs)
        .map(|(c, x)| {
            let ll = InterceptLoglik::build(c, x, model.family, beta);
            cluster_log_marginal(c, &ll, sigma0_sq, &rule)
        })
        .collect()
}

#[cfg(test)]
pub(crate) fn marginal_loglik_general_path(
    data: &[ClusterData<f64>],
    model: &ModelSpec,
    beta: &Array1<f64>,
    sigma0_sq: f64,
    nodes: usize,
) -> Result<f64> {
    let designs = active_designs(data, model)?;
    let rule = GaussHermite::new(nodes);
    let mut total = 0.0;
    for (c, x) in data.iter().zip(&designs) {
        let ll = InterceptLoglik::build_general(c, x, model.family, beta);
        total += cluster_log_marginal(c, &ll, sigma0_sq, &rule)?;
    }
    Ok(total)
}

/// Maximize the marginal likelihood over (β, log σ₀²) with the default
/// quadrature order.
pub fn fit_marginal<F: Scalar>(
    data: &[ClusterData<F>],
    model: &ModelSpec,
    ctrl: &FitControl<F>,
) -> Result<MarginalFit<F>> {
    fit_marginal_with_nodes(data, model, ctrl, DEFAULT_NODES)
}

pub fn fit_marginal_with_nodes<F: Scalar>(
    data: &[ClusterData<F>],
    model: &ModelSpec,
    ctrl: &FitControl<F>,
    nodes: usize,
) -> Result<MarginalFit<F>> {
    if data.is_empty() {
        return Err(Error::invalid_input("no clusters supplied"));
    }
    if nodes == 0 {
        return Err(Error::invalid_input("quadrature needs at least one node"));
    }
    let designs = active_designs(data, model)?;
    let rule = GaussHermite::new(nodes);
    let p = model.active_columns.len() + 1;

    // Warm start at the pooled ordinary-GLM estimate.
    let pooled = ClusterData::pooled(data)?;
    let pooled_fit = fit_cluster(&pooled, model, ctrl)?;

    let (t_lo, t_hi) = LOG_SIGMA_SQ_RANGE;
    let objective = |params: &[F]| -> F {
        let beta = Array1::from(params[..p].to_vec());
        let t = params[p].max(cast(t_lo)).min(cast(t_hi));
        let sigma_sq = t.exp();
        let mut total = F::zero();
        for (c, x) in data.iter().zip(&designs) {
            let ll = InterceptLoglik::build(c, x, model.family, &beta);
            match cluster_log_marginal(c, &ll, sigma_sq, &rule) {
                Ok(v) => total += v,
                Err(_) => return F::infinity(),
            }
        }
        -total
    };

    // Coarse scan over the variance before the simplex runs.
    let mut start: Vec<F> = pooled_fit.beta.to_vec();
    start.push(F::zero());
    let mut best_t = cast::<F>(-2.0);
    let mut best_val = F::infinity();
    for t in [-16.0, -6.0, -3.5, -2.0, -1.0, 0.0, 1.0] {
        start[p] = cast(t);
        let v = objective(&start);
        if v < best_val {
            best_val = v;
            best_t = cast(t);
        }
    }
    start[p] = best_t;

    let mut steps = vec![cast::<F>(0.1); p];
    steps.push(cast(0.5));
    let opt = nelder_mead(objective, &start, &steps, cast(1e-10), 4000);
    if !opt.fx.is_finite() {
        return Err(Error::NonFiniteIterate {
            detail: "marginal likelihood could not be evaluated near the optimum".to_string(),
        });
    }

    let beta = Array1::from(opt.x[..p].to_vec());
    let t = opt.x[p].max(cast(t_lo)).min(cast(t_hi));
    let mut sigma0_sq = t.exp();
    let mut loglik = -opt.fx;
    let mut boundary = false;
    if sigma0_sq < cast(BOUNDARY_SIGMA_SQ) {
        boundary = true;
        // The σ₀² → 0 limit is the pooled likelihood; prefer the exact
        // boundary value when it is at least as good.
        let at_zero = marginal_loglik(data, model, &beta, F::zero(), nodes)?;
        if at_zero >= loglik {
            sigma0_sq = F::zero();
            loglik = at_zero;
        }
    }

    let m_aic = cast::<F>(-2.0) * loglik + cast::<F>(2.0) * cast::<F>((p + 1) as f64);
    Ok(MarginalFit {
        beta,
        sigma0_sq,
        marginal_loglik: loglik,
        m_aic,
        quadrature_nodes: nodes,
        converged: opt.converged,
        boundary,
    })
}

/// Rank candidate models by mAIC, mirroring the meanAIC selector's
/// tie-breaking. Per-cluster entries are −2·ℓᵢ + 2(p+1)/K, so each model's
/// column sums to its mAIC.
pub fn maic_select<F: Scalar>(
    data: &[ClusterData<F>],
    models: &[ModelSpec],
    ctrl: &FitControl<F>,
) -> Result<SelectionReport<F>> {
    if data.is_empty() {
        return Err(Error::invalid_input("no clusters supplied"));
    }
    if models.is_empty() {
        return Err(Error::invalid_input("no candidate models supplied"));
    }
    let k = data.len();
    let fits: Vec<Result<MarginalFit<F>>> = models
        .par_iter()
        .map(|m| fit_marginal(data, m, ctrl))
        .collect();

    let mut per_model = Vec::with_capacity(models.len());
    for (model, fit) in models.iter().zip(fits) {
        match fit {
            Ok(fit) => {
                let per = marginal_loglik_by_cluster(
                    data,
                    model,
                    &fit.beta,
                    fit.sigma0_sq,
                    fit.quadrature_nodes,
                )?;
                let p = model.active_columns.len() + 1;
                let penalty_share =
                    cast::<F>(2.0 * (p + 1) as f64) / cast::<F>(k as f64);
                per_model.push(ModelScore {
                    spec: model.clone(),
                    value: fit.m_aic,
                    per_cluster: per
                        .into_iter()
                        .map(|l| Some(cast::<F>(-2.0) * l + penalty_share))
                        .collect(),
                    non_converged: usize::from(!fit.converged),
                    skipped: 0,
                });
            }
            Err(_) => per_model.push(ModelScore {
                spec: model.clone(),
                value: F::infinity(),
                per_cluster: vec![None; k],
                non_converged: 0,
                skipped: k,
            }),
        }
    }
    if per_model.iter().all(|s| !s.value.is_finite()) {
        return Err(Error::AllClustersSkipped);
    }
    let best = pick_best(&per_model);
    Ok(SelectionReport { criterion_name: "mAIC-RI".to_string(), k, per_model, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::loglik;
    use crate::optim::numerical_gradient;
    use crate::test_oracles::lmm_marginal_loglik;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn poisson_clusters(seed: u64, k: usize, n: usize, sigma0: f64) -> Vec<ClusterData<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..k)
            .map(|i| {
                let b0 = sigma0 * rng.sample::<f64, _>(rand_distr::StandardNormal);
                let mut y = Vec::new();
                let mut x = Vec::new();
                for _ in 0..n {
                    let x1 = f64::from(rng.random_bool(0.5));
                    let lam = (0.3 + b0 + 0.4 * x1).exp();
                    y.push(rand_distr::Distribution::sample(
                        &rand_distr::Poisson::new(lam).unwrap(),
                        &mut rng,
                    ));
                    x.push(x1);
                }
                let covs = Array2::from_shape_vec((n, 1), x).unwrap();
                ClusterData::from_covariates(format!("c{i}"), Array1::from(y), covs).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_variance_recovers_pooled_loglik() {
        let data = poisson_clusters(4, 5, 30, 0.4);
        let model = ModelSpec::new(vec![1], Family::Poisson).unwrap();
        let beta = array![0.25, 0.35];
        let marginal = marginal_loglik(&data, &model, &beta, 0.0, 15).unwrap();
        let pooled = ClusterData::pooled(&data).unwrap();
        let direct = loglik(&pooled, &model, &beta).unwrap();
        assert_relative_eq!(marginal, direct, epsilon = 1e-10);
    }

    #[test]
    fn gaussian_family_matches_closed_form_mixed_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..5 {
            let k = 4;
            let n = 12;
            let sigma0_sq = 0.1 + 0.4 * rng.random::<f64>();
            let beta = array![rng.random::<f64>() - 0.5, rng.random::<f64>()];
            let data: Vec<ClusterData<f64>> = (0..k)
                .map(|i| {
                    let b0 = sigma0_sq.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
                    let mut y = Vec::new();
                    let mut x = Vec::new();
                    for _ in 0..n {
                        let xv: f64 = rng.random::<f64>();
                        y.push(beta[0] + beta[1] * xv + b0 + rng.sample::<f64, _>(rand_distr::StandardNormal));
                        x.push(xv);
                    }
                    ClusterData::from_covariates(
                        format!("g{trial}-{i}"),
                        Array1::from(y),
                        Array2::from_shape_vec((n, 1), x).unwrap(),
                    )
                    .unwrap()
                })
                .collect();
            let model = ModelSpec::new(vec![1], Family::Gaussian).unwrap();
            let ours = marginal_loglik(&data, &model, &beta, sigma0_sq, 15).unwrap();
            let oracle = lmm_marginal_loglik(&data, &model, &beta, sigma0_sq);
            assert_relative_eq!(ours, oracle, epsilon = 1e-8);
        }
    }

    #[test]
    fn poisson_fast_path_matches_general_path() {
        let data = poisson_clusters(11, 6, 25, 0.5);
        let model = ModelSpec::new(vec![1], Family::Poisson).unwrap();
        let beta = array![0.3, 0.4];
        for sigma_sq in [0.01, 0.3, 1.2] {
            let fast = marginal_loglik(&data, &model, &beta, sigma_sq, 15).unwrap();
            let general =
                marginal_loglik_general_path(&data, &model, &beta, sigma_sq, 15).unwrap();
            assert_relative_eq!(fast, general, epsilon = 1e-10);
        }
    }

    #[test]
    fn quadrature_order_is_converged_by_ten_nodes() {
        let data = poisson_clusters(13, 8, 80, 0.55);
        let model = ModelSpec::new(vec![1], Family::Poisson).unwrap();
        let beta = array![0.3, 0.2];
        let l10 = marginal_loglik_by_cluster(&data, &model, &beta, 0.3, 10).unwrap();
        let l25 = marginal_loglik_by_cluster(&data, &model, &beta, 0.3, 25).unwrap();
        for (a, b) in l10.iter().zip(&l25) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn fitted_likelihood_dominates_the_boundary_model() {
        let data = poisson_clusters(17, 10, 40, 0.5);
        let model = ModelSpec::new(vec![1], Family::Poisson).unwrap();
        let ctrl = FitControl::default();
        let fit = fit_marginal(&data, &model, &ctrl).unwrap();
        let pooled = ClusterData::pooled(&data).unwrap();
        let pooled_fit = fit_cluster(&pooled, &model, &ctrl).unwrap();
        let boundary =
            marginal_loglik(&data, &model, &pooled_fit.beta, 0.0, DEFAULT_NODES).unwrap();
        assert!(
            fit.marginal_loglik >= boundary - 1e-6,
            "{} < {}",
            fit.marginal_loglik,
            boundary
        );
    }

    #[test]
    fn objective_gradient_matches_central_differences() {
        let data = poisson_clusters(23, 5, 30, 0.4);
        let model = ModelSpec::new(vec![1], Family::Poisson).unwrap();
        let f = |params: &[f64]| {
            marginal_loglik(
                &data,
                &model,
                &array![params[0], params[1]],
                params[2].exp(),
                20,
            )
            .unwrap()
        };
        let points = [[0.2, 0.3, -1.0], [0.4, 0.1, -0.5], [0.1, 0.5, -2.0]];
        for x in points {
            let coarse = numerical_gradient(f, &x, 1e-5);
            let fine = numerical_gradient(f, &x, 1e-6);
            for (a, b) in coarse.iter().zip(&fine) {
                assert_relative_eq!(a, b, max_relative = 1e-3, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn zero_variance_data_hits_the_boundary() {
        let data = poisson_clusters(29, 12, 60, 0.0);
        let model = ModelSpec::new(vec![1], Family::Poisson).unwrap();
        let ctrl = FitControl::default();
        let fit = fit_marginal(&data, &model, &ctrl).unwrap();
        assert!(fit.sigma0_sq < 0.01, "sigma0_sq = {}", fit.sigma0_sq);

        // β̂ within two pooled standard errors of the pooled fit.
        let pooled = ClusterData::pooled(&data).unwrap();
        let pooled_fit = fit_cluster(&pooled, &model, &ctrl).unwrap();
        let info = pooled_fit.hessian.mapv(|h| -h * pooled.n() as f64);
        for j in 0..2 {
            let mut e = Array1::zeros(2);
            e[j] = 1.0;
            let col = match crate::linalg::solve_sym_psd(&info, &e, 1e-12) {
                crate::linalg::SymSolve::Solution(x) => x,
                _ => panic!("pooled information singular"),
            };
            let se = col[j].sqrt();
            assert!(
                (fit.beta[j] - pooled_fit.beta[j]).abs() <= 2.0 * se,
                "beta[{j}] {} vs pooled {} (se {se})",
                fit.beta[j],
                pooled_fit.beta[j]
            );
        }
    }

    #[test]
    fn maic_counts_fixed_effects_plus_variance() {
        let data = poisson_clusters(31, 6, 40, 0.3);
        let model = ModelSpec::new(vec![1], Family::Poisson).unwrap();
        let fit = fit_marginal(&data, &model, &FitControl::default()).unwrap();
        assert_relative_eq!(
            fit.m_aic,
            -2.0 * fit.marginal_loglik + 2.0 * 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn single_candidate_model_is_selected() {
        let data = poisson_clusters(37, 5, 25, 0.3);
        let models = vec![ModelSpec::new(vec![1], Family::Poisson).unwrap()];
        let report = maic_select(&data, &models, &FitControl::default()).unwrap();
        assert_eq!(report.best, 0);
        assert_eq!(report.k, 5);
        // Column sums to the mAIC value.
        let col: f64 = report.per_model[0].per_cluster.iter().map(|v| v.unwrap()).sum();
        assert_relative_eq!(col, report.per_model[0].value, max_relative = 1e-10);
    }
}
