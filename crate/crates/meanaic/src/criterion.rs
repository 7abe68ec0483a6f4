//! Candidate-model enumeration and the cluster-averaged AIC criterion.
//!
//! The score of a candidate covariate set is the equal-weight average of the
//! per-cluster GLM AICs. Averaging (rather than pooling) keeps the value on
//! the scale of a single cluster's AIC and requires nothing beyond the
//! cluster-level fits, in particular no random-effect specification.

use crate::data::ClusterData;
use crate::error::{Error, Result};
use crate::family::Family;
use crate::glm::{cluster_aic, fit_cluster, ClusterFit, FitControl};
use crate::num::{cast, Scalar};
use rayon::prelude::*;

/// Hard cap on the enumeration lattice: at most 2^20 submodels.
pub const MAX_CANDIDATES: usize = 20;

/// Relative tolerance under which two criterion values count as tied.
const TIE_EPS: f64 = 1e-12;

/// A candidate submodel: a set of active covariate columns (the intercept is
/// always implicitly active) plus the response family.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    /// Distinct, sorted dataset column indices (1-based; 0 is the intercept
    /// and may not appear here).
    pub active_columns: Vec<usize>,
    pub family: Family,
    /// Human-readable name; ignored by equality.
    pub label: String,
}

impl ModelSpec {
    pub fn new(mut active_columns: Vec<usize>, family: Family) -> Result<Self> {
        if active_columns.contains(&0) {
            return Err(Error::invalid_input(
                "column 0 is the intercept and is always active; do not list it",
            ));
        }
        active_columns.sort_unstable();
        active_columns.dedup();
        let label = default_label(&active_columns);
        Ok(Self { active_columns, family, label })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Parameters counted by the AIC penalty: regression coefficients
    /// including the intercept, plus the profiled Gaussian variance.
    pub fn p_effective(&self) -> usize {
        self.active_columns.len() + 1 + self.family.extra_params()
    }
}

impl PartialEq for ModelSpec {
    fn eq(&self, other: &Self) -> bool {
        self.active_columns == other.active_columns && self.family == other.family
    }
}
impl Eq for ModelSpec {}

fn default_label(active: &[usize]) -> String {
    if active.is_empty() {
        "null".to_string()
    } else {
        active.iter().map(|c| format!("x{c}")).collect::<Vec<_>>().join("+")
    }
}

/// All 2^|candidates| submodels over `candidates`, each unioned with
/// `forced`, ordered by size and then lexicographically.
pub fn enumerate_models(
    candidates: &[usize],
    forced: &[usize],
    family: Family,
) -> Result<Vec<ModelSpec>> {
    let mut cand = candidates.to_vec();
    cand.sort_unstable();
    cand.dedup();
    if cand.len() != candidates.len() {
        return Err(Error::invalid_input("candidate columns must be distinct"));
    }
    if cand.len() > MAX_CANDIDATES {
        return Err(Error::LatticeTooLarge { candidates: cand.len(), cap: MAX_CANDIDATES });
    }
    if forced.iter().any(|f| cand.contains(f)) {
        return Err(Error::invalid_input("candidate and forced column sets must be disjoint"));
    }

    let mut subsets: Vec<Vec<usize>> = (0u32..(1u32 << cand.len()))
        .map(|mask| {
            cand.iter()
                .enumerate()
                .filter(|(k, _)| mask >> k & 1 == 1)
                .map(|(_, &c)| c)
                .collect()
        })
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));

    subsets
        .into_iter()
        .map(|mut s| {
            s.extend_from_slice(forced);
            ModelSpec::new(s, family)
        })
        .collect()
}

/// Generalized information criterion averaged over clusters:
/// K⁻¹ Σᵢ [−2·logLᵢ + λ·p_effective]. Skipped clusters are `None` and are
/// excluded from the average.
pub fn generalized_ic<F: Scalar>(
    fits: &[Option<ClusterFit<F>>],
    p_effective: usize,
    lambda: F,
) -> Result<F> {
    if lambda < F::zero() {
        return Err(Error::invalid_input("penalty weight lambda must be non-negative"));
    }
    if fits.is_empty() {
        return Err(Error::invalid_input("no cluster fits supplied"));
    }
    let mut sum = F::zero();
    let mut k = 0usize;
    for fit in fits.iter().flatten() {
        sum += score_term(fit, p_effective, lambda);
        k += 1;
    }
    if k == 0 {
        return Err(Error::AllClustersSkipped);
    }
    Ok(sum / cast(k as f64))
}

/// The average of the per-cluster AICs (the λ = 2 generalized criterion).
pub fn mean_aic<F: Scalar>(fits: &[Option<ClusterFit<F>>], p_effective: usize) -> Result<F> {
    generalized_ic(fits, p_effective, cast(2.0))
}

/// Per-cluster contribution to the generalized criterion; at λ = 2 this is
/// exactly [`cluster_aic`].
fn score_term<F: Scalar>(fit: &ClusterFit<F>, p_effective: usize, lambda: F) -> F {
    cast::<F>(-2.0) * fit.max_loglik() + lambda * cast::<F>(p_effective as f64)
}

/// What to do when a cluster fails to fit under some model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipPolicy {
    /// Abort the whole selection on the first failure.
    FailFast,
    /// Remove a cluster that failed under any model from the average of
    /// every model, keeping the averages comparable. The default.
    DropClusterFromAllModels,
    /// Assign the failed cluster its worst observed AIC across models.
    ImputeWorst,
}

impl Default for SkipPolicy {
    fn default() -> Self {
        SkipPolicy::DropClusterFromAllModels
    }
}

/// Penalty dimension convention for the criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyMode {
    /// Each submodel is penalized by its own dimension. The default.
    PerModel,
    /// Every submodel is penalized by the full covariate count r+1 (plus the
    /// Gaussian variance where applicable), making the penalty constant
    /// across the lattice.
    FixedFull,
}

/// Scoring configuration for [`select_with`].
#[derive(Debug, Clone, Copy)]
pub struct ScoreConfig<F> {
    pub lambda: F,
    pub penalty: PenaltyMode,
}

impl<F: Scalar> ScoreConfig<F> {
    pub fn mean_aic() -> Self {
        Self { lambda: cast(2.0), penalty: PenaltyMode::PerModel }
    }

    pub fn gic(lambda: F) -> Self {
        Self { lambda, penalty: PenaltyMode::PerModel }
    }

    fn name(&self) -> String {
        match (self.penalty, self.lambda == cast(2.0)) {
            (PenaltyMode::PerModel, true) => "meanAIC".to_string(),
            _ => format!("GIC(lambda={})", self.lambda),
        }
    }
}

/// One model's scoring summary inside a [`SelectionReport`].
#[derive(Debug, Clone)]
pub struct ModelScore<F> {
    pub spec: ModelSpec,
    /// Criterion value; the average of the per-cluster entries.
    pub value: F,
    /// Per-cluster score contributions, `None` for skipped clusters. Always
    /// length K.
    pub per_cluster: Vec<Option<F>>,
    /// Clusters whose fit hit the iteration cap (reported, still used).
    pub non_converged: usize,
    /// Clusters without a usable fit under this model (dropped or imputed).
    pub skipped: usize,
}

/// Criterion values across the candidate lattice plus the chosen model.
#[derive(Debug, Clone)]
pub struct SelectionReport<F> {
    pub criterion_name: String,
    /// Cluster count K.
    pub k: usize,
    pub per_model: Vec<ModelScore<F>>,
    /// Index into `per_model` of the selected model.
    pub best: usize,
}

impl<F: Scalar> SelectionReport<F> {
    pub fn best_model(&self) -> &ModelScore<F> {
        &self.per_model[self.best]
    }
}

/// Fit every (cluster, model) pair and rank the models by meanAIC.
pub fn select<F: Scalar>(
    data: &[ClusterData<F>],
    models: &[ModelSpec],
    ctrl: &FitControl<F>,
    policy: SkipPolicy,
) -> Result<SelectionReport<F>> {
    select_with(data, models, ctrl, policy, ScoreConfig::mean_aic())
}

/// [`select`] with an explicit penalty configuration.
pub fn select_with<F: Scalar>(
    data: &[ClusterData<F>],
    models: &[ModelSpec],
    ctrl: &FitControl<F>,
    policy: SkipPolicy,
    score: ScoreConfig<F>,
) -> Result<SelectionReport<F>> {
    if data.is_empty() {
        return Err(Error::invalid_input("no clusters supplied"));
    }
    if models.is_empty() {
        return Err(Error::invalid_input("no candidate models supplied"));
    }
    let k = data.len();
    let m = models.len();
    let full_covariates = data[0].n_covariates();

    // Fit tasks are independent; results are regrouped in (model, cluster)
    // index order so the reduction below is deterministic.
    let fits: Vec<Result<ClusterFit<F>>> = (0..m * k)
        .into_par_iter()
        .map(|t| fit_cluster(&data[t % k], &models[t / k], ctrl))
        .collect();

    if policy == SkipPolicy::FailFast {
        for r in &fits {
            if let Err(e) = r {
                return Err(clone_fit_error(e));
            }
        }
    }

    let p_eff = |spec: &ModelSpec| -> usize {
        match score.penalty {
            PenaltyMode::PerModel => spec.p_effective(),
            PenaltyMode::FixedFull => full_covariates + 1 + spec.family.extra_params(),
        }
    };

    // Raw per-(model, cluster) terms.
    let mut terms: Vec<Vec<Option<F>>> = Vec::with_capacity(m);
    let mut non_converged = vec![0usize; m];
    for (mi, model) in models.iter().enumerate() {
        let p = p_eff(model);
        let mut row = Vec::with_capacity(k);
        for ci in 0..k {
            match &fits[mi * k + ci] {
                Ok(fit) => {
                    if !fit.converged {
                        non_converged[mi] += 1;
                    }
                    row.push(Some(score_term(fit, p, score.lambda)));
                }
                Err(_) => row.push(None),
            }
        }
        terms.push(row);
    }

    // Apply the skip policy.
    let mut skipped = vec![0usize; m];
    match policy {
        SkipPolicy::FailFast => {}
        SkipPolicy::DropClusterFromAllModels => {
            let bad: Vec<usize> =
                (0..k).filter(|&ci| terms.iter().any(|row| row[ci].is_none())).collect();
            for row in &mut terms {
                for &ci in &bad {
                    row[ci] = None;
                }
            }
            for s in &mut skipped {
                *s = bad.len();
            }
        }
        SkipPolicy::ImputeWorst => {
            for ci in 0..k {
                let worst = terms
                    .iter()
                    .filter_map(|row| row[ci])
                    .fold(None, |acc: Option<F>, v| Some(acc.map_or(v, |a| a.max(v))));
                match worst {
                    Some(w) => {
                        for (mi, row) in terms.iter_mut().enumerate() {
                            if row[ci].is_none() {
                                row[ci] = Some(w);
                                skipped[mi] += 1;
                            }
                        }
                    }
                    // No model fit this cluster at all: it stays skipped
                    // everywhere, as under the drop policy.
                    None => {
                        for s in &mut skipped {
                            *s += 1;
                        }
                    }
                }
            }
        }
    }

    // Reduce to per-model values in fixed cluster order.
    let mut per_model = Vec::with_capacity(m);
    for (mi, model) in models.iter().enumerate() {
        let mut sum = F::zero();
        let mut count = 0usize;
        for term in terms[mi].iter().flatten() {
            sum += *term;
            count += 1;
        }
        let value = if count == 0 { F::infinity() } else { sum / cast(count as f64) };
        per_model.push(ModelScore {
            spec: model.clone(),
            value,
            per_cluster: terms[mi].clone(),
            non_converged: non_converged[mi],
            skipped: skipped[mi],
        });
    }
    if per_model.iter().all(|s| !s.value.is_finite()) {
        return Err(Error::AllClustersSkipped);
    }

    let best = pick_best(&per_model);
    Ok(SelectionReport { criterion_name: score.name(), k, per_model, best })
}

/// Choose the winning model: smallest value among models with no skipped
/// clusters (falling back to all models when none qualify), breaking ties at
/// relative 1e-12 by model size, then lexicographically on the active set,
/// then by enumeration order.
pub(crate) fn pick_best<F: Scalar>(per_model: &[ModelScore<F>]) -> usize {
    let clean: Vec<usize> = (0..per_model.len())
        .filter(|&i| per_model[i].skipped == 0 && per_model[i].value.is_finite())
        .collect();
    let pool: Vec<usize> = if clean.is_empty() {
        (0..per_model.len()).filter(|&i| per_model[i].value.is_finite()).collect()
    } else {
        clean
    };
    let min_value = pool
        .iter()
        .map(|&i| per_model[i].value)
        .fold(F::infinity(), F::min);
    let eps = cast::<F>(TIE_EPS) * (F::one() + min_value.abs());
    pool.into_iter()
        .filter(|&i| per_model[i].value <= min_value + eps)
        .min_by(|&a, &b| {
            let (sa, sb) = (&per_model[a].spec, &per_model[b].spec);
            sa.active_columns
                .len()
                .cmp(&sb.active_columns.len())
                .then_with(|| sa.active_columns.cmp(&sb.active_columns))
                .then_with(|| a.cmp(&b))
        })
        .expect("pool is non-empty")
}

/// Fit errors arrive behind shared references out of the parallel fit pass;
/// rebuild an owned value for propagation.
fn clone_fit_error(e: &Error) -> Error {
    match e {
        Error::DegenerateDesign { columns } => {
            Error::DegenerateDesign { columns: columns.clone() }
        }
        Error::TooFewObservations { n, p } => Error::TooFewObservations { n: *n, p: *p },
        Error::NonFiniteIterate { detail } => {
            Error::NonFiniteIterate { detail: detail.clone() }
        }
        Error::InvalidResponse { line, message } => {
            Error::InvalidResponse { line: *line, message: message.clone() }
        }
        other => Error::invalid_input(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{Array1, Array2};

    fn fake_fit(n: usize, max_loglik: f64) -> ClusterFit<f64> {
        ClusterFit {
            n,
            beta: Array1::zeros(1),
            max_avg_loglik: max_loglik / n as f64,
            hessian: Array2::zeros((1, 1)),
            converged: true,
            iterations: 1,
        }
    }

    /// Fit whose AIC at p_effective = 2 equals the given value.
    fn fit_with_aic(aic: f64) -> Option<ClusterFit<f64>> {
        Some(fake_fit(1, -(aic - 4.0) / 2.0))
    }

    #[test]
    fn enumerate_two_candidates_gives_the_four_submodels() {
        let models = enumerate_models(&[1, 2], &[], Family::Poisson).unwrap();
        let active: Vec<Vec<usize>> = models.iter().map(|m| m.active_columns.clone()).collect();
        assert_eq!(active, vec![vec![], vec![1], vec![2], vec![1, 2]]);
        assert_eq!(models[0].label, "null");
        assert_eq!(models[3].label, "x1+x2");
    }

    #[test]
    fn enumerate_with_forced_only() {
        let models = enumerate_models(&[], &[3], Family::Poisson).unwrap();
        assert_eq!(models.len(), 1);
        assert_eq!(models[0].active_columns, vec![3]);
    }

    #[test]
    fn enumerate_three_candidates_by_cardinality() {
        let models = enumerate_models(&[1, 2, 3], &[], Family::Poisson).unwrap();
        assert_eq!(models.len(), 8);
        let sizes: Vec<usize> = models.iter().map(|m| m.active_columns.len()).collect();
        assert_eq!(sizes, vec![0, 1, 1, 1, 2, 2, 2, 3]);
    }

    #[test]
    fn enumerate_rejects_oversized_lattice() {
        let candidates: Vec<usize> = (1..=21).collect();
        match enumerate_models(&candidates, &[], Family::Poisson) {
            Err(Error::LatticeTooLarge { candidates: 21, cap: 20 }) => {}
            other => panic!("expected LatticeTooLarge, got {other:?}"),
        }
    }

    #[test]
    fn enumerate_rejects_overlapping_forced() {
        assert!(enumerate_models(&[1, 2], &[2], Family::Poisson).is_err());
    }

    #[test]
    fn model_specs_compare_by_active_set() {
        let a = ModelSpec::new(vec![2, 1], Family::Poisson).unwrap();
        let b = ModelSpec::new(vec![1, 2], Family::Poisson).unwrap().with_label("other");
        assert_eq!(a, b);
        assert_eq!(a.active_columns, vec![1, 2]);
    }

    #[test]
    fn mean_aic_is_the_arithmetic_mean() {
        let fits = vec![fit_with_aic(10.0), fit_with_aic(20.0), fit_with_aic(30.0)];
        assert_relative_eq!(mean_aic(&fits, 2).unwrap(), 20.0, epsilon = 1e-12);
    }

    #[test]
    fn single_cluster_mean_is_its_aic() {
        let fits = vec![fit_with_aic(123.5)];
        assert_relative_eq!(mean_aic(&fits, 2).unwrap(), 123.5, epsilon = 1e-12);
    }

    #[test]
    fn mean_aic_errors_when_everything_is_skipped() {
        let fits: Vec<Option<ClusterFit<f64>>> = vec![None, None];
        match mean_aic(&fits, 2) {
            Err(Error::AllClustersSkipped) => {}
            other => panic!("expected AllClustersSkipped, got {other:?}"),
        }
    }

    #[test]
    fn gic_at_lambda_two_is_bitwise_mean_aic() {
        let fits = vec![fit_with_aic(11.25), fit_with_aic(-3.5), None];
        let a = mean_aic(&fits, 3).unwrap();
        let b = generalized_ic(&fits, 3, 2.0).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn gic_at_lambda_zero_drops_the_penalty() {
        let fits = vec![Some(fake_fit(4, -10.0)), Some(fake_fit(4, -20.0))];
        let v = generalized_ic(&fits, 3, 0.0).unwrap();
        assert_relative_eq!(v, -2.0 * (-15.0), epsilon = 1e-12);
    }

    #[test]
    fn gic_with_log_n_penalty_recomputed_by_hand() {
        let lls = [-40.0, -55.0, -61.0];
        let fits: Vec<Option<ClusterFit<f64>>> =
            lls.iter().map(|&l| Some(fake_fit(10, l))).collect();
        let lambda = 10.0f64.ln();
        let p = 2;
        let by_hand: f64 =
            lls.iter().map(|&l| -2.0 * l + lambda * p as f64).sum::<f64>() / 3.0;
        assert_relative_eq!(generalized_ic(&fits, p, lambda).unwrap(), by_hand, epsilon = 1e-12);
    }

    #[test]
    fn gic_rejects_negative_lambda() {
        let fits = vec![fit_with_aic(1.0)];
        assert!(generalized_ic(&fits, 2, -0.5).is_err());
    }

    fn score(spec: ModelSpec, value: f64, skipped: usize) -> ModelScore<f64> {
        ModelScore { spec, value, per_cluster: vec![Some(value)], non_converged: 0, skipped }
    }

    #[test]
    fn tie_break_prefers_fewer_covariates() {
        let a = score(ModelSpec::new(vec![1], Family::Gaussian).unwrap(), 100.0, 0);
        let b = score(
            ModelSpec::new(vec![1, 2], Family::Gaussian).unwrap(),
            100.0 + 4e-13,
            0,
        );
        // Values tie to within 1e-12 relative; the smaller model wins even
        // though the larger one has the (negligibly) smaller value.
        let c = score(ModelSpec::new(vec![2], Family::Gaussian).unwrap(), 100.0 - 4e-13, 0);
        assert_eq!(pick_best(&[b.clone(), a.clone(), c]), 1);
        // Without the third model, still the singleton.
        assert_eq!(pick_best(&[b, a]), 1);
    }

    #[test]
    fn tie_break_on_identical_specs_takes_the_first() {
        let a = score(ModelSpec::new(vec![1], Family::Poisson).unwrap(), 50.0, 0);
        let b = score(ModelSpec::new(vec![1], Family::Poisson).unwrap(), 50.0, 0);
        assert_eq!(pick_best(&[a, b]), 0);
    }

    #[test]
    fn lexicographic_tie_break_on_equal_size() {
        let a = score(ModelSpec::new(vec![2], Family::Poisson).unwrap(), 10.0, 0);
        let b = score(ModelSpec::new(vec![1], Family::Poisson).unwrap(), 10.0, 0);
        assert_eq!(pick_best(&[a, b]), 1);
    }

    #[test]
    fn models_with_skips_lose_to_clean_models() {
        let a = score(ModelSpec::new(vec![1], Family::Poisson).unwrap(), 5.0, 1);
        let b = score(ModelSpec::new(vec![2], Family::Poisson).unwrap(), 9.0, 0);
        assert_eq!(pick_best(&[a, b]), 1);
    }
}
