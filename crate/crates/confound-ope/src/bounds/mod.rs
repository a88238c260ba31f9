//! The estimator suite: standard importance-sampling OPE, the naive
//! Γ-rescaled bound, and the loss-minimization bound.
//!
//! All estimators assume confounding acts at a single known step `t*` with
//! odds-ratio level at most `Γ`. The naive bound rescales the full importance
//! weight by `Γ` (downweighting favorable returns, upweighting unfavorable
//! ones); it is valid but loose. The main bound instead fits, for every
//! action `a` available at `t*`, a worst-case adjustment `κ(H; a)` — the
//! weighted `Γ`-expectile of the downstream weighted return — and assembles
//!
//! ```text
//! mean_i[ Π_{t<t*} ρ_t · Σ_a π̄(a|H)·(1 − π̂(a|H))·κ(H; a) ]
//!   + mean_i[ π̂(A_{t*}|H) · Y · Π_t ρ_t ]
//! ```
//!
//! Upper bounds come from negating returns, refitting κ, and negating the
//! result. At `Γ = 1` the adjustment collapses to a conditional mean and the
//! whole expression reduces to the importance-sampling estimate.

pub mod expectile;
pub mod toy;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{BucketKey, FitError, StateBucketer};
use crate::core::{
    discounted_return, history_key, step_weights, CoreError, Dataset, Policy, StateRef,
    WeightOptions,
};
use crate::exec::{self, ExecMode};
pub use expectile::GdOptions;
use expectile::{predict_raw, LinearExpectileProblem, LinearFitResult};
pub use toy::{toy_confounded_likelihood, toy_confounded_likelihood_exact, Fraction, ToyError};

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("{0}")]
    Fit(#[from] FitError),
    #[error("confounding level {0} must be >= 1")]
    InvalidGamma(f64),
    #[error("confounded step {t_star} outside 1..={horizon}")]
    InvalidTStar { t_star: usize, horizon: usize },
    #[error("no adjustment model for action {action}: the evaluation policy needs it but the data never takes it")]
    MissingKappa { action: usize },
    #[error("adjustment fit for action {action} did not converge after {iters} iterations (gradient norm {grad_norm:.3e})")]
    KappaNonConvergence {
        action: usize,
        iters: usize,
        grad_norm: f64,
    },
    #[error("gamma grid must be sorted strictly increasing and start at values >= 1")]
    BadGammaGrid,
}

/// Posited confounding: the step it acts on and its odds-ratio level.
/// `per_step_gammas` activates the general multi-step form of the naive
/// bound; the loss-minimization bound always uses the single-step model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConfoundingSpec {
    pub t_star: usize,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_step_gammas: Option<Vec<f64>>,
}

impl ConfoundingSpec {
    pub fn single(t_star: usize, gamma: f64) -> Self {
        ConfoundingSpec {
            t_star,
            gamma,
            per_step_gammas: None,
        }
    }

    fn validate(&self, horizon: usize) -> Result<(), BoundError> {
        if self.t_star == 0 || self.t_star > horizon {
            return Err(BoundError::InvalidTStar {
                t_star: self.t_star,
                horizon,
            });
        }
        if !(self.gamma >= 1.0) {
            return Err(BoundError::InvalidGamma(self.gamma));
        }
        if let Some(gs) = &self.per_step_gammas {
            if gs.len() != horizon {
                return Err(BoundError::InvalidTStar {
                    t_star: gs.len(),
                    horizon,
                });
            }
            if let Some(&g) = gs.iter().find(|&&g| !(g >= 1.0)) {
                return Err(BoundError::InvalidGamma(g));
            }
        }
        Ok(())
    }

    /// Product of per-step levels; the single-step model contributes only
    /// `gamma` itself.
    fn gamma_product(&self) -> f64 {
        match &self.per_step_gammas {
            Some(gs) => gs.iter().product(),
            None => self.gamma,
        }
    }
}

/// How histories at `t*` bucket for the tabular adjustment model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KappaBucketing {
    /// Bucket by the state observed at `t*` (the state is the relevant
    /// history when `t* = 1`, or when states are built to carry it).
    State(StateBucketer),
    /// Bucket by the full discrete prefix `(s_1, a_1, ..., s_{t*})`.
    FullPrefix,
}

impl KappaBucketing {
    fn key(&self, ep: &crate::core::Episode, t_star: usize) -> Result<BucketKey, CoreError> {
        match self {
            KappaBucketing::State(b) => b.key(ep.state_at(t_star)?),
            KappaBucketing::FullPrefix => history_key(ep, t_star)?.discrete_key(),
        }
    }
}

/// Features for the linear adjustment model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaFeatures {
    InterceptOnly,
    /// `[1, state features at t*]`.
    StateWithIntercept,
}

impl KappaFeatures {
    fn features(&self, state: &StateRef) -> Result<Vec<f64>, CoreError> {
        match self {
            KappaFeatures::InterceptOnly => Ok(Vec::new()),
            KappaFeatures::StateWithIntercept => Ok(state.features()?.to_vec()),
        }
    }
}

/// Model class for the per-action adjustment.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KappaSpec {
    Tabular {
        bucketing: KappaBucketing,
    },
    Linear {
        features: KappaFeatures,
        optimizer: GdOptions,
    },
}

/// Shared estimator knobs.
#[derive(Copy, Clone, Debug, Default, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub weights: WeightOptions,
    #[serde(skip)]
    pub exec: ExecMode,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Lower,
    Upper,
}

/// Fitted tabular adjustment for one action: a value per history bucket plus
/// the pooled fallback served to buckets with no samples for this action.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KappaTabularAction {
    pub action: usize,
    #[serde(with = "crate::behavior::bucket_table_serde")]
    pub table: BTreeMap<BucketKey, f64>,
    pub pooled: Option<f64>,
}

impl KappaTabularAction {
    pub fn value(&self, bucket: &BucketKey) -> Option<f64> {
        self.table.get(bucket).copied().or(self.pooled)
    }
}

/// Fitted linear adjustment for one action.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KappaLinearAction {
    pub action: usize,
    pub fit: LinearFitResult,
}

/// The fitted per-action adjustment function κ(H; a) for one direction.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KappaModel {
    Tabular {
        bucketing: KappaBucketing,
        actions: Vec<Option<KappaTabularAction>>,
    },
    Linear {
        features: KappaFeatures,
        actions: Vec<Option<KappaLinearAction>>,
    },
}

impl KappaModel {
    /// Evaluates κ for `action` at the step-`t*` state. Only valid for
    /// actions the model was fitted for.
    pub fn evaluate(&self, state: &StateRef, action: usize) -> Result<f64, BoundError> {
        match self {
            KappaModel::Tabular { bucketing, actions } => {
                let bucket = match bucketing {
                    KappaBucketing::State(b) => b.key(state)?,
                    KappaBucketing::FullPrefix => vec![state.index()? as i64],
                };
                actions
                    .get(action)
                    .and_then(|a| a.as_ref())
                    .and_then(|a| a.value(&bucket))
                    .ok_or(BoundError::MissingKappa { action })
            }
            KappaModel::Linear { features, actions } => {
                let x = features.features(state)?;
                let model = actions
                    .get(action)
                    .and_then(|a| a.as_ref())
                    .ok_or(BoundError::MissingKappa { action })?;
                Ok(predict_raw(&model.fit.raw_coefs, &x))
            }
        }
    }

    fn gd_iterations(&self) -> usize {
        match self {
            KappaModel::Tabular { .. } => 0,
            KappaModel::Linear { actions, .. } => actions
                .iter()
                .flatten()
                .map(|a| a.fit.iterations)
                .sum(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BoundComponents {
    pub kappa_term_lower: f64,
    pub kappa_term_upper: f64,
    pub direct_term: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BoundDiagnostics {
    pub max_rho: f64,
    pub clipped_steps: usize,
    /// Distinct (action, bucket) pairs served by the pooled fallback.
    pub fallback_bucket_pairs: usize,
    pub kappa_gd_iterations: usize,
}

/// Lower/upper bounds with the importance-sampling point estimate and the
/// assembled terms. Standard errors are filled by replication sweeps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub gamma: f64,
    pub t_star: usize,
    pub lower: f64,
    pub upper: f64,
    pub point_is: f64,
    pub components: BoundComponents,
    pub n_used: usize,
    pub diagnostics: BoundDiagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_upper: Option<f64>,
}

struct EpisodeTerms {
    y: f64,
    prefix: f64,
    full: f64,
    z: f64,
    pibar: Vec<f64>,
    pihat: Vec<f64>,
    a_star: usize,
    bucket: Option<BucketKey>,
    features: Option<Vec<f64>>,
    max_rho: f64,
    clipped: usize,
}

/// Prepared per-episode terms for one (dataset, behavior, evaluation, t*)
/// combination. Building it once amortizes weight computation across the
/// whole Γ grid.
pub struct BoundProblem {
    terms: Vec<EpisodeTerms>,
    t_star: usize,
    n_actions: usize,
    kappa_spec: KappaSpec,
    exec: ExecMode,
    point_is: f64,
    needed: Vec<bool>,
    fallback_bucket_pairs: usize,
    max_rho: f64,
    clipped_steps: usize,
    tabular_groups: Vec<BTreeMap<BucketKey, Vec<usize>>>,
    linear_problems: Vec<Option<LinearExpectileProblem>>,
    /// Episode indices with `A_{t*} = a`, for pooled fallbacks and weights.
    action_indices: Vec<Vec<usize>>,
}

impl BoundProblem {
    pub fn new(
        dataset: &Dataset,
        behavior: &dyn Policy,
        evaluation: &dyn Policy,
        t_star: usize,
        kappa_spec: KappaSpec,
        opts: &EstimatorOptions,
    ) -> Result<Self, BoundError> {
        let horizon = dataset.horizon();
        if t_star == 0 || t_star > horizon {
            return Err(BoundError::InvalidTStar { t_star, horizon });
        }
        let n = dataset.len();
        let n_actions = dataset.action_cardinalities()[t_star - 1];
        let episodes = dataset.episodes();
        let discount = dataset.discount();
        let terms: Vec<EpisodeTerms> = exec::try_map_range(opts.exec, n, |i| {
            let ep = &episodes[i];
            let w = step_weights(ep, behavior, evaluation, &opts.weights)?;
            let y = discounted_return(ep, discount)?;
            let prefix = w.product_range(1, t_star - 1);
            let post = w.product_range(t_star + 1, horizon);
            let full = prefix * w.rho()[t_star - 1] * post;
            let state = ep.state_at(t_star)?;
            let pibar = evaluation.action_probs(t_star, state)?;
            let pihat = behavior.action_probs(t_star, state)?;
            let (bucket, features) = match &kappa_spec {
                KappaSpec::Tabular { bucketing } => (Some(bucketing.key(ep, t_star)?), None),
                KappaSpec::Linear { features, .. } => {
                    (None, Some(features.features(state)?))
                }
            };
            Ok::<EpisodeTerms, BoundError>(EpisodeTerms {
                y,
                prefix,
                full,
                z: y * post,
                pibar,
                pihat,
                a_star: ep.action_at(t_star)?,
                bucket,
                features,
                max_rho: w.max_rho,
                clipped: w.clipped_steps,
            })
        })?;

        let mut needed = vec![false; n_actions];
        let mut max_rho = 0.0_f64;
        let mut clipped_steps = 0usize;
        let mut action_indices = vec![Vec::new(); n_actions];
        for (i, t) in terms.iter().enumerate() {
            for a in 0..n_actions {
                if t.pibar[a] > 0.0 {
                    needed[a] = true;
                }
            }
            max_rho = max_rho.max(t.max_rho);
            clipped_steps += t.clipped;
            action_indices[t.a_star].push(i);
        }
        for (a, is_needed) in needed.iter().enumerate() {
            if *is_needed && action_indices[a].is_empty() {
                return Err(BoundError::MissingKappa { action: a });
            }
        }

        let mut tabular_groups: Vec<BTreeMap<BucketKey, Vec<usize>>> =
            vec![BTreeMap::new(); n_actions];
        let mut linear_problems: Vec<Option<LinearExpectileProblem>> =
            (0..n_actions).map(|_| None).collect();
        let mut fallback_pairs = 0usize;
        match &kappa_spec {
            KappaSpec::Tabular { .. } => {
                for (i, t) in terms.iter().enumerate() {
                    tabular_groups[t.a_star]
                        .entry(t.bucket.clone().expect("tabular bucket"))
                        .or_default()
                        .push(i);
                }
                let mut seen: BTreeSet<(usize, &BucketKey)> = BTreeSet::new();
                for t in &terms {
                    let bucket = t.bucket.as_ref().expect("tabular bucket");
                    for a in 0..n_actions {
                        if t.pibar[a] > 0.0 && !tabular_groups[a].contains_key(bucket) {
                            seen.insert((a, bucket));
                        }
                    }
                }
                fallback_pairs = seen.len();
            }
            KappaSpec::Linear { .. } => {
                for (a, idxs) in action_indices.iter().enumerate() {
                    if idxs.is_empty() {
                        continue;
                    }
                    let rows: Vec<Vec<f64>> = idxs
                        .iter()
                        .map(|&i| terms[i].features.clone().expect("linear features"))
                        .collect();
                    let z: Vec<f64> = idxs.iter().map(|&i| terms[i].z).collect();
                    let w: Vec<f64> = idxs.iter().map(|&i| 1.0 / terms[i].pihat[a]).collect();
                    linear_problems[a] = Some(LinearExpectileProblem::new(&rows, z, w, n));
                }
            }
        }

        let products: Vec<f64> = terms.iter().map(|t| t.y * t.full).collect();
        let point_is = exec::pairwise_mean(&products);
        Ok(BoundProblem {
            terms,
            t_star,
            n_actions,
            kappa_spec,
            exec: opts.exec,
            point_is,
            needed,
            fallback_bucket_pairs: fallback_pairs,
            max_rho,
            clipped_steps,
            tabular_groups,
            linear_problems,
            action_indices,
        })
    }

    pub fn n_episodes(&self) -> usize {
        self.terms.len()
    }

    /// Standard importance-sampling estimate `mean(Y · Π ρ_t)`.
    pub fn point_is(&self) -> f64 {
        self.point_is
    }

    /// Naive Γ-rescaled bounds `(lower, upper)`.
    pub fn naive(&self, cspec: &ConfoundingSpec) -> (f64, f64) {
        let g = cspec.gamma_product();
        let lower: Vec<f64> = self
            .terms
            .iter()
            .map(|t| t.y * t.full * if t.y < 0.0 { g } else { 1.0 / g })
            .collect();
        let upper: Vec<f64> = self
            .terms
            .iter()
            .map(|t| t.y * t.full * if t.y > 0.0 { g } else { 1.0 / g })
            .collect();
        (exec::pairwise_mean(&lower), exec::pairwise_mean(&upper))
    }

    fn fit_kappa_action(
        &self,
        action: usize,
        gamma: f64,
        negate: bool,
        warm: Option<&[f64]>,
    ) -> Result<Option<KappaPart>, BoundError> {
        let idxs = &self.action_indices[action];
        if idxs.is_empty() {
            return Ok(None);
        }
        match &self.kappa_spec {
            KappaSpec::Tabular { .. } => {
                let sign = if negate { -1.0 } else { 1.0 };
                let pooled_z: Vec<f64> = idxs.iter().map(|&i| sign * self.terms[i].z).collect();
                let pooled_w: Vec<f64> = idxs
                    .iter()
                    .map(|&i| 1.0 / self.terms[i].pihat[action])
                    .collect();
                let mut table = BTreeMap::new();
                for (bucket, members) in &self.tabular_groups[action] {
                    let z: Vec<f64> = members.iter().map(|&i| sign * self.terms[i].z).collect();
                    let w: Vec<f64> = members
                        .iter()
                        .map(|&i| 1.0 / self.terms[i].pihat[action])
                        .collect();
                    table.insert(bucket.clone(), expectile::weighted_expectile(&z, &w, gamma));
                }
                let pooled = Some(expectile::weighted_expectile(&pooled_z, &pooled_w, gamma));
                Ok(Some(KappaPart::Tabular(KappaTabularAction {
                    action,
                    table,
                    pooled,
                })))
            }
            KappaSpec::Linear { optimizer, .. } => {
                let problem = self.linear_problems[action]
                    .as_ref()
                    .expect("linear problem exists for populated action");
                let fit = problem
                    .solve(gamma, optimizer, warm, negate)
                    .map_err(|(iters, grad_norm)| BoundError::KappaNonConvergence {
                        action,
                        iters,
                        grad_norm,
                    })?;
                Ok(Some(KappaPart::Linear(KappaLinearAction { action, fit })))
            }
        }
    }

    /// Fits the per-action adjustment at `gamma`; `negate` fits the
    /// upper-bound direction (returns negated).
    pub fn fit_kappa(&self, gamma: f64, negate: bool) -> Result<KappaModel, BoundError> {
        let parts = exec::try_map_range(self.exec, self.n_actions, |a| {
            self.fit_kappa_action(a, gamma, negate, None)
        })?;
        self.parts_to_model(parts)
    }

    fn parts_to_model(&self, parts: Vec<Option<KappaPart>>) -> Result<KappaModel, BoundError> {
        match &self.kappa_spec {
            KappaSpec::Tabular { bucketing } => Ok(KappaModel::Tabular {
                bucketing: bucketing.clone(),
                actions: parts
                    .into_iter()
                    .map(|p| {
                        p.map(|p| match p {
                            KappaPart::Tabular(t) => t,
                            KappaPart::Linear(_) => unreachable!("tabular spec"),
                        })
                    })
                    .collect(),
            }),
            KappaSpec::Linear { features, .. } => Ok(KappaModel::Linear {
                features: features.clone(),
                actions: parts
                    .into_iter()
                    .map(|p| {
                        p.map(|p| match p {
                            KappaPart::Linear(l) => l,
                            KappaPart::Tabular(_) => unreachable!("linear spec"),
                        })
                    })
                    .collect(),
            }),
        }
    }

    /// Episode-wise κ value for `action`, using the prepared bucket/features.
    fn kappa_value(&self, model: &KappaModel, term: &EpisodeTerms, action: usize) -> f64 {
        match model {
            KappaModel::Tabular { actions, .. } => actions[action]
                .as_ref()
                .and_then(|a| a.value(term.bucket.as_ref().expect("tabular bucket")))
                .expect("validated at construction"),
            KappaModel::Linear { actions, .. } => {
                let m = actions[action].as_ref().expect("validated at construction");
                predict_raw(
                    &m.fit.raw_coefs,
                    term.features.as_ref().expect("linear features"),
                )
            }
        }
    }

    /// Assembles the bound for one direction; returns (kappa term, direct
    /// term). The bound value is their sum (negated for the upper direction).
    fn assemble(&self, model: &KappaModel, negate: bool) -> (f64, f64) {
        let sign = if negate { -1.0 } else { 1.0 };
        let parts: Vec<(f64, f64)> = exec::map_range(self.exec, self.terms.len(), |i| {
            let t = &self.terms[i];
            let mut adjustment = 0.0;
            if t.prefix != 0.0 {
                for a in 0..self.n_actions {
                    let pb = t.pibar[a];
                    if pb > 0.0 {
                        adjustment += pb * (1.0 - t.pihat[a]) * self.kappa_value(model, t, a);
                    }
                }
            }
            (t.prefix * adjustment, t.pihat[t.a_star] * sign * t.y * t.full)
        });
        let kappa_terms: Vec<f64> = parts.iter().map(|p| p.0).collect();
        let direct_terms: Vec<f64> = parts.iter().map(|p| p.1).collect();
        (
            exec::pairwise_mean(&kappa_terms),
            exec::pairwise_mean(&direct_terms),
        )
    }

    /// Lower and upper loss-minimization bounds at `gamma`, fitting κ for
    /// both directions.
    pub fn final_bound(&self, gamma: f64) -> Result<BoundEstimate, BoundError> {
        if !(gamma >= 1.0) {
            return Err(BoundError::InvalidGamma(gamma));
        }
        let kappa_lower = self.fit_kappa(gamma, false)?;
        let kappa_upper = self.fit_kappa(gamma, true)?;
        Ok(self.estimate_from(gamma, &kappa_lower, &kappa_upper))
    }

    /// Assembles both directions from pre-fitted adjustments.
    pub fn estimate_from(
        &self,
        gamma: f64,
        kappa_lower: &KappaModel,
        kappa_upper: &KappaModel,
    ) -> BoundEstimate {
        let (k_low, direct) = self.assemble(kappa_lower, false);
        let (k_up, direct_up) = self.assemble(kappa_upper, true);
        let lower = k_low + direct;
        let upper = -(k_up + direct_up);
        BoundEstimate {
            gamma,
            t_star: self.t_star,
            lower,
            upper,
            point_is: self.point_is,
            components: BoundComponents {
                kappa_term_lower: k_low,
                kappa_term_upper: -k_up,
                direct_term: direct,
            },
            n_used: self.terms.len(),
            diagnostics: BoundDiagnostics {
                max_rho: self.max_rho,
                clipped_steps: self.clipped_steps,
                fallback_bucket_pairs: self.fallback_bucket_pairs,
                kappa_gd_iterations: kappa_lower.gd_iterations() + kappa_upper.gd_iterations(),
            },
            se_lower: None,
            se_upper: None,
        }
    }

    /// Bounds over an ascending Γ grid. Linear fits warm-start from the
    /// neighboring grid point, action by action, so sweeps stay cheap and
    /// reproducible.
    pub fn final_bound_sweep(&self, gammas: &[f64]) -> Result<Vec<BoundEstimate>, BoundError> {
        if gammas.is_empty() || gammas[0] < 1.0 || gammas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BoundError::BadGammaGrid);
        }
        // parts[direction][action] -> per-gamma fits
        let fit_action_sweep = |negate: bool| -> Result<Vec<Vec<Option<KappaPart>>>, BoundError> {
            exec::try_map_range(self.exec, self.n_actions, |a| {
                let mut warm: Option<Vec<f64>> = None;
                let mut per_gamma = Vec::with_capacity(gammas.len());
                for &g in gammas {
                    let part = self.fit_kappa_action(a, g, negate, warm.as_deref())?;
                    if let Some(KappaPart::Linear(l)) = &part {
                        warm = Some(l.fit.std_coefs.clone());
                    }
                    per_gamma.push(part);
                }
                Ok(per_gamma)
            })
        };
        let lower_parts = fit_action_sweep(false)?;
        let upper_parts = fit_action_sweep(true)?;
        gammas
            .iter()
            .enumerate()
            .map(|(gi, &g)| {
                let low: Vec<Option<KappaPart>> = (0..self.n_actions)
                    .map(|a| lower_parts[a][gi].clone())
                    .collect();
                let up: Vec<Option<KappaPart>> = (0..self.n_actions)
                    .map(|a| upper_parts[a][gi].clone())
                    .collect();
                let kappa_lower = self.parts_to_model(low)?;
                let kappa_upper = self.parts_to_model(up)?;
                Ok(self.estimate_from(g, &kappa_lower, &kappa_upper))
            })
            .collect()
    }
}

#[derive(Clone)]
enum KappaPart {
    Tabular(KappaTabularAction),
    Linear(KappaLinearAction),
}

/// Standard importance-sampling OPE: `mean(Y · Π_t ρ_t)`.
pub fn is_estimate(
    dataset: &Dataset,
    behavior: &dyn Policy,
    evaluation: &dyn Policy,
    opts: &EstimatorOptions,
) -> Result<f64, BoundError> {
    let episodes = dataset.episodes();
    let discount = dataset.discount();
    let products = exec::try_map_range(opts.exec, dataset.len(), |i| {
        let ep = &episodes[i];
        let w = step_weights(ep, behavior, evaluation, &opts.weights)?;
        Ok::<f64, BoundError>(discounted_return(ep, discount)? * w.product_all())
    })?;
    Ok(exec::pairwise_mean(&products))
}

/// Naive Γ-rescaled bound in one direction.
pub fn naive_bound(
    dataset: &Dataset,
    behavior: &dyn Policy,
    evaluation: &dyn Policy,
    cspec: &ConfoundingSpec,
    direction: Direction,
    opts: &EstimatorOptions,
) -> Result<f64, BoundError> {
    cspec.validate(dataset.horizon())?;
    let g = cspec.gamma_product();
    let episodes = dataset.episodes();
    let discount = dataset.discount();
    let values = exec::try_map_range(opts.exec, dataset.len(), |i| {
        let ep = &episodes[i];
        let w = step_weights(ep, behavior, evaluation, &opts.weights)?;
        let y = discounted_return(ep, discount)?;
        let favorable = match direction {
            Direction::Lower => y > 0.0,
            Direction::Upper => y < 0.0,
        };
        let mult = if favorable { 1.0 / g } else { g };
        Ok::<f64, BoundError>(y * w.product_all() * mult)
    })?;
    Ok(exec::pairwise_mean(&values))
}

/// Full loss-minimization bound: fits κ in both directions and assembles the
/// lower and upper estimates.
pub fn final_bound(
    dataset: &Dataset,
    behavior: &dyn Policy,
    evaluation: &dyn Policy,
    cspec: &ConfoundingSpec,
    kappa_spec: KappaSpec,
    opts: &EstimatorOptions,
) -> Result<BoundEstimate, BoundError> {
    cspec.validate(dataset.horizon())?;
    let problem = BoundProblem::new(dataset, behavior, evaluation, cspec.t_star, kappa_spec, opts)?;
    problem.final_bound(cspec.gamma)
}

/// Assembles both directions from caller-fitted adjustments, checking that
/// every action the evaluation policy can take has a model.
pub fn final_bound_with(
    dataset: &Dataset,
    behavior: &dyn Policy,
    evaluation: &dyn Policy,
    cspec: &ConfoundingSpec,
    kappa_lower: &KappaModel,
    kappa_upper: &KappaModel,
    opts: &EstimatorOptions,
) -> Result<BoundEstimate, BoundError> {
    cspec.validate(dataset.horizon())?;
    let spec = match kappa_lower {
        KappaModel::Tabular { bucketing, .. } => KappaSpec::Tabular {
            bucketing: bucketing.clone(),
        },
        KappaModel::Linear { features, .. } => KappaSpec::Linear {
            features: features.clone(),
            optimizer: GdOptions::default(),
        },
    };
    let problem = BoundProblem::new(dataset, behavior, evaluation, cspec.t_star, spec, opts)?;
    for (model, label) in [(kappa_lower, "lower"), (kappa_upper, "upper")] {
        let covered: Vec<bool> = match model {
            KappaModel::Tabular { actions, .. } => actions.iter().map(|a| a.is_some()).collect(),
            KappaModel::Linear { actions, .. } => actions.iter().map(|a| a.is_some()).collect(),
        };
        for (a, needed) in problem.needed.iter().enumerate() {
            if *needed && !covered.get(a).copied().unwrap_or(false) {
                let _ = label;
                return Err(BoundError::MissingKappa { action: a });
            }
        }
    }
    Ok(problem.estimate_from(cspec.gamma, kappa_lower, kappa_upper))
}

/// Tabular adjustment for one action (lower direction).
pub fn solve_kappa_tabular(
    dataset: &Dataset,
    behavior: &dyn Policy,
    evaluation: &dyn Policy,
    cspec: &ConfoundingSpec,
    action: usize,
    bucketing: KappaBucketing,
    opts: &EstimatorOptions,
) -> Result<KappaTabularAction, BoundError> {
    cspec.validate(dataset.horizon())?;
    let problem = BoundProblem::new(
        dataset,
        behavior,
        evaluation,
        cspec.t_star,
        KappaSpec::Tabular { bucketing },
        opts,
    )?;
    match problem.fit_kappa_action(action, cspec.gamma, false, None)? {
        Some(KappaPart::Tabular(t)) => Ok(t),
        _ => Err(BoundError::MissingKappa { action }),
    }
}

/// Linear adjustment for one action (lower direction).
pub fn solve_kappa_linear(
    dataset: &Dataset,
    behavior: &dyn Policy,
    evaluation: &dyn Policy,
    cspec: &ConfoundingSpec,
    action: usize,
    features: KappaFeatures,
    optimizer: GdOptions,
    opts: &EstimatorOptions,
) -> Result<KappaLinearAction, BoundError> {
    cspec.validate(dataset.horizon())?;
    let problem = BoundProblem::new(
        dataset,
        behavior,
        evaluation,
        cspec.t_star,
        KappaSpec::Linear {
            features,
            optimizer,
        },
        opts,
    )?;
    match problem.fit_kappa_action(action, cspec.gamma, false, None)? {
        Some(KappaPart::Linear(l)) => Ok(l),
        _ => Err(BoundError::MissingKappa { action }),
    }
}

/// Importance-weight health report.
#[derive(Clone, Debug, Serialize)]
pub struct OverlapReport {
    pub n: usize,
    pub max_step_rho: f64,
    /// Quantiles of the per-episode weight product (keys "q50", "q90",
    /// "q99", "max").
    pub product_quantiles: BTreeMap<String, f64>,
    /// Effective sample size `(Σw)² / Σw²` of the product weights.
    pub ess: f64,
    pub zero_weight_fraction: f64,
    pub clipped_step_fraction: f64,
    pub flags: Vec<String>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Weight diagnostics for an evaluation policy against a behavior policy.
pub fn overlap_diagnostics(
    dataset: &Dataset,
    behavior: &dyn Policy,
    evaluation: &dyn Policy,
    opts: &EstimatorOptions,
) -> Result<OverlapReport, BoundError> {
    let episodes = dataset.episodes();
    let per_ep = exec::try_map_range(opts.exec, dataset.len(), |i| {
        let w = step_weights(&episodes[i], behavior, evaluation, &opts.weights)?;
        Ok::<(f64, f64, usize), BoundError>((w.product_all(), w.max_rho, w.clipped_steps))
    })?;
    let n = per_ep.len();
    let mut products: Vec<f64> = per_ep.iter().map(|p| p.0).collect();
    let max_step_rho = per_ep.iter().map(|p| p.1).fold(0.0, f64::max);
    let clipped: usize = per_ep.iter().map(|p| p.2).sum();
    let zero = products.iter().filter(|&&w| w == 0.0).count();
    let sum: f64 = exec::pairwise_sum(&products);
    let sum_sq: f64 = exec::pairwise_sum(&products.iter().map(|w| w * w).collect::<Vec<_>>());
    let ess = if sum_sq > 0.0 { sum * sum / sum_sq } else { 0.0 };
    products.sort_by(f64::total_cmp);
    let mut product_quantiles = BTreeMap::new();
    product_quantiles.insert("q50".to_string(), quantile(&products, 0.5));
    product_quantiles.insert("q90".to_string(), quantile(&products, 0.9));
    product_quantiles.insert("q99".to_string(), quantile(&products, 0.99));
    product_quantiles.insert("max".to_string(), *products.last().unwrap_or(&f64::NAN));
    let mut flags = Vec::new();
    if clipped > 0 {
        flags.push(format!("{clipped} step weights clipped at the cap"));
    }
    if ess < 0.01 * n as f64 {
        flags.push(format!("effective sample size {ess:.1} below 1% of n"));
    }
    let total_steps = n * dataset.horizon();
    Ok(OverlapReport {
        n,
        max_step_rho,
        product_quantiles,
        ess,
        zero_weight_fraction: zero as f64 / n as f64,
        clipped_step_fraction: clipped as f64 / total_steps as f64,
        flags,
    })
}

#[cfg(test)]
mod tests;
