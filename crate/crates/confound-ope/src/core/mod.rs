//! Trajectory data model shared by the simulators and estimators: episodes,
//! datasets, discounted returns, history keys, and per-step importance
//! weights.

pub mod io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Observed state at one step: a discrete index into an enumerated state
/// space, or a real-valued feature vector. A dataset is homogeneous in kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateRef {
    Discrete(usize),
    Features(Vec<f64>),
}

impl StateRef {
    pub fn is_discrete(&self) -> bool {
        matches!(self, StateRef::Discrete(_))
    }

    /// Discrete index, or an error for feature states.
    pub fn index(&self) -> Result<usize, CoreError> {
        match self {
            StateRef::Discrete(s) => Ok(*s),
            StateRef::Features(_) => Err(CoreError::WrongStateKind {
                expected: "discrete",
            }),
        }
    }

    /// Feature slice, or an error for discrete states.
    pub fn features(&self) -> Result<&[f64], CoreError> {
        match self {
            StateRef::Features(x) => Ok(x),
            StateRef::Discrete(_) => Err(CoreError::WrongStateKind {
                expected: "features",
            }),
        }
    }
}

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("episode field lengths differ: {states} states, {actions} actions, {rewards} rewards")]
    LengthMismatch {
        states: usize,
        actions: usize,
        rewards: usize,
    },
    #[error("empty episode")]
    EmptyEpisode,
    #[error("action {action} at step {t} out of range (|A_t| = {cardinality})")]
    ActionOutOfRange {
        t: usize,
        action: usize,
        cardinality: usize,
    },
    #[error("step index {t} out of range for horizon {horizon}")]
    StepOutOfRange { t: usize, horizon: usize },
    #[error("behavior probability {prob:.3e} at step {t} is at or below the positivity floor")]
    ZeroBehaviorProbability { t: usize, prob: f64 },
    #[error("dataset is not homogeneous: {0}")]
    HeterogeneousDataset(String),
    #[error("dataset has no episodes")]
    EmptyDataset,
    #[error("discount {0} outside (0, 1]")]
    InvalidDiscount(f64),
    #[error("expected a {expected} state")]
    WrongStateKind { expected: &'static str },
    #[error("policy has no table for state {state} at step {t}")]
    UnknownState { t: usize, state: usize },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    SchemaViolation { line: usize, message: String },
}

/// One observed trajectory of fixed horizon `T`: `states[t-1]`, `actions[t-1]`
/// and `rewards[t-1]` are the step-`t` state, action and reward. Early
/// termination is represented by absorbing states with zero reward, so all
/// episodes of a dataset share the same horizon.
///
/// Simulators may attach the true behavior action probability of each taken
/// action, both marginalized over the confounder and conditional on it; the
/// estimators never read these fields, they exist for oracle checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    states: Vec<StateRef>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior_probs_marginal: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior_probs_conditional: Option<Vec<f64>>,
}

impl Episode {
    pub fn new(
        states: Vec<StateRef>,
        actions: Vec<usize>,
        rewards: Vec<f64>,
    ) -> Result<Self, CoreError> {
        if states.is_empty() {
            return Err(CoreError::EmptyEpisode);
        }
        if states.len() != actions.len() || states.len() != rewards.len() {
            return Err(CoreError::LengthMismatch {
                states: states.len(),
                actions: actions.len(),
                rewards: rewards.len(),
            });
        }
        Ok(Episode {
            states,
            actions,
            rewards,
            behavior_probs_marginal: None,
            behavior_probs_conditional: None,
        })
    }

    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[StateRef] {
        &self.states
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// State at 1-based step `t`.
    pub fn state_at(&self, t: usize) -> Result<&StateRef, CoreError> {
        self.check_step(t)?;
        Ok(&self.states[t - 1])
    }

    /// Action at 1-based step `t`.
    pub fn action_at(&self, t: usize) -> Result<usize, CoreError> {
        self.check_step(t)?;
        Ok(self.actions[t - 1])
    }

    fn check_step(&self, t: usize) -> Result<(), CoreError> {
        if t == 0 || t > self.horizon() {
            return Err(CoreError::StepOutOfRange {
                t,
                horizon: self.horizon(),
            });
        }
        Ok(())
    }
}

/// A batch of episodes sharing horizon, discount, and per-step action-set
/// cardinalities. Immutable after construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dataset {
    episodes: Vec<Episode>,
    discount: f64,
    action_cardinalities: Vec<usize>,
}

impl Dataset {
    pub fn new(
        episodes: Vec<Episode>,
        discount: f64,
        action_cardinalities: Vec<usize>,
    ) -> Result<Self, CoreError> {
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(CoreError::InvalidDiscount(discount));
        }
        if episodes.is_empty() {
            return Err(CoreError::EmptyDataset);
        }
        let horizon = action_cardinalities.len();
        let discrete = episodes[0].states[0].is_discrete();
        for ep in &episodes {
            if ep.horizon() != horizon {
                return Err(CoreError::HeterogeneousDataset(format!(
                    "episode horizon {} != dataset horizon {}",
                    ep.horizon(),
                    horizon
                )));
            }
            for (t0, (&a, s)) in ep.actions.iter().zip(&ep.states).enumerate() {
                if a >= action_cardinalities[t0] {
                    return Err(CoreError::ActionOutOfRange {
                        t: t0 + 1,
                        action: a,
                        cardinality: action_cardinalities[t0],
                    });
                }
                if s.is_discrete() != discrete {
                    return Err(CoreError::HeterogeneousDataset(
                        "mixed discrete and feature states".to_string(),
                    ));
                }
            }
        }
        Ok(Dataset {
            episodes,
            discount,
            action_cardinalities,
        })
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn horizon(&self) -> usize {
        self.action_cardinalities.len()
    }

    pub fn action_cardinalities(&self) -> &[usize] {
        &self.action_cardinalities
    }

    pub fn is_discrete(&self) -> bool {
        self.episodes[0].states[0].is_discrete()
    }

    /// New dataset holding the episodes at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset, CoreError> {
        let episodes = indices.iter().map(|&i| self.episodes[i].clone()).collect();
        Dataset::new(episodes, self.discount, self.action_cardinalities.clone())
    }
}

/// Canonical encoding of an observed history prefix `(s_1, a_1, ..., s_t)`.
///
/// Two episodes with identical prefixes produce equal keys; in discrete mode
/// the key doubles as a hashable bucket id, in feature mode [`flat_features`]
/// exposes the prefix as one vector.
///
/// [`flat_features`]: HistoryKey::flat_features
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryKey {
    pub states: Vec<StateRef>,
    pub actions: Vec<usize>,
}

impl HistoryKey {
    /// Order-preserving integer encoding `[s_1, a_1, s_2, ..., s_t]` for
    /// discrete prefixes.
    pub fn discrete_key(&self) -> Result<Vec<i64>, CoreError> {
        let mut key = Vec::with_capacity(self.states.len() * 2);
        for (i, s) in self.states.iter().enumerate() {
            key.push(s.index()? as i64);
            if i < self.actions.len() {
                key.push(self.actions[i] as i64);
            }
        }
        Ok(key)
    }

    /// Prefix flattened to one feature vector: each state's features (or its
    /// index as a single value) followed by the action taken after it.
    pub fn flat_features(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (i, s) in self.states.iter().enumerate() {
            match s {
                StateRef::Discrete(v) => out.push(*v as f64),
                StateRef::Features(x) => out.extend_from_slice(x),
            }
            if i < self.actions.len() {
                out.push(self.actions[i] as f64);
            }
        }
        out
    }
}

/// History prefix of `episode` up to 1-based step `t`: states `1..=t`,
/// actions `1..t`.
pub fn history_key(episode: &Episode, t: usize) -> Result<HistoryKey, CoreError> {
    if t == 0 || t > episode.horizon() {
        return Err(CoreError::StepOutOfRange {
            t,
            horizon: episode.horizon(),
        });
    }
    Ok(HistoryKey {
        states: episode.states[..t].to_vec(),
        actions: episode.actions[..t - 1].to_vec(),
    })
}

/// A policy queried per step. `t` is 1-based. Implementations must be pure:
/// repeated queries return identical rows.
pub trait Policy: Send + Sync {
    /// Probability row over the step-`t` action set given the step-`t` state.
    fn action_probs(&self, t: usize, state: &StateRef) -> Result<Vec<f64>, CoreError>;

    /// Probability of one action; default goes through the full row.
    fn action_prob(&self, t: usize, state: &StateRef, action: usize) -> Result<f64, CoreError> {
        let row = self.action_probs(t, state)?;
        row.get(action).copied().ok_or(CoreError::ActionOutOfRange {
            t,
            action,
            cardinality: row.len(),
        })
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn action_probs(&self, t: usize, state: &StateRef) -> Result<Vec<f64>, CoreError> {
        (**self).action_probs(t, state)
    }

    fn action_prob(&self, t: usize, state: &StateRef, action: usize) -> Result<f64, CoreError> {
        (**self).action_prob(t, state, action)
    }
}

impl<P: Policy + ?Sized> Policy for std::sync::Arc<P> {
    fn action_probs(&self, t: usize, state: &StateRef) -> Result<Vec<f64>, CoreError> {
        (**self).action_probs(t, state)
    }

    fn action_prob(&self, t: usize, state: &StateRef, action: usize) -> Result<f64, CoreError> {
        (**self).action_prob(t, state, action)
    }
}

/// Discounted return `Σ_t discount^(t-1) * rewards[t]`.
pub fn discounted_return(episode: &Episode, discount: f64) -> Result<f64, CoreError> {
    if !(discount > 0.0 && discount <= 1.0) {
        return Err(CoreError::InvalidDiscount(discount));
    }
    let mut total = 0.0;
    let mut scale = 1.0;
    for &r in &episode.rewards {
        total += scale * r;
        scale *= discount;
    }
    Ok(total)
}

/// Options for importance-weight computation.
///
/// `eps_prob` is the positivity floor: a behavior probability at or below it
/// raises [`CoreError::ZeroBehaviorProbability`] instead of producing a huge
/// weight. `rho_cap` clips each per-step ratio from above; the consistency
/// theory assumes estimated ratios stay within a constant multiple of the
/// true overlap bound, and the cap realizes that hypothesis by construction.
#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
pub struct WeightOptions {
    pub eps_prob: f64,
    pub rho_cap: f64,
}

impl Default for WeightOptions {
    fn default() -> Self {
        WeightOptions {
            eps_prob: 1e-12,
            rho_cap: 100.0,
        }
    }
}

/// Per-step importance ratios `ρ_t` of one episode, with range products and
/// overlap diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    rho: Vec<f64>,
    pub max_rho: f64,
    /// Steps where the raw ratio exceeded `rho_cap` and was clipped.
    pub clipped_steps: usize,
}

impl WeightVector {
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Product of `ρ_t` over the inclusive 1-based range `lo..=hi`.
    /// An empty range (`lo > hi`) has product 1.
    pub fn product_range(&self, lo: usize, hi: usize) -> f64 {
        if lo > hi {
            return 1.0;
        }
        self.rho[lo - 1..hi].iter().product()
    }

    pub fn product_all(&self) -> f64 {
        self.product_range(1, self.rho.len())
    }
}

/// Per-step ratios `ρ_t = evaluation(A_t | s_t) / behavior(A_t | s_t)` of one
/// episode. Errors if the behavior probability of an observed action is at or
/// below `opts.eps_prob`.
pub fn step_weights(
    episode: &Episode,
    behavior: &dyn Policy,
    evaluation: &dyn Policy,
    opts: &WeightOptions,
) -> Result<WeightVector, CoreError> {
    let mut rho = Vec::with_capacity(episode.horizon());
    let mut max_rho = 0.0_f64;
    let mut clipped = 0;
    for t in 1..=episode.horizon() {
        let state = &episode.states[t - 1];
        let action = episode.actions[t - 1];
        let b = behavior.action_prob(t, state, action)?;
        if b <= opts.eps_prob {
            return Err(CoreError::ZeroBehaviorProbability { t, prob: b });
        }
        let e = evaluation.action_prob(t, state, action)?;
        let mut r = e / b;
        if r > opts.rho_cap {
            r = opts.rho_cap;
            clipped += 1;
        }
        max_rho = max_rho.max(r);
        rho.push(r);
    }
    Ok(WeightVector {
        rho,
        max_rho,
        clipped_steps: clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode(rewards: Vec<f64>) -> Episode {
        let t = rewards.len();
        Episode::new(
            (0..t).map(StateRef::Discrete).collect(),
            vec![0; t],
            rewards,
        )
        .unwrap()
    }

    struct Uniform(usize);

    impl Policy for Uniform {
        fn action_probs(&self, _t: usize, _s: &StateRef) -> Result<Vec<f64>, CoreError> {
            Ok(vec![1.0 / self.0 as f64; self.0])
        }
    }

    struct FixedAction(usize, usize);

    impl Policy for FixedAction {
        fn action_probs(&self, _t: usize, _s: &StateRef) -> Result<Vec<f64>, CoreError> {
            let mut row = vec![0.0; self.1];
            row[self.0] = 1.0;
            Ok(row)
        }
    }

    #[test]
    fn discounted_return_single_step() {
        assert_eq!(discounted_return(&episode(vec![1.0]), 0.99).unwrap(), 1.0);
    }

    #[test]
    fn discounted_return_terminal_reward() {
        let got = discounted_return(&episode(vec![0.0, 0.0, 0.0, 0.0, 1.0]), 0.99).unwrap();
        assert!((got - 0.96059601).abs() < 1e-12);
    }

    #[test]
    fn discounted_return_undiscounted_sum() {
        assert_eq!(
            discounted_return(&episode(vec![1.0, 1.0, 1.0]), 1.0).unwrap(),
            3.0
        );
    }

    #[test]
    fn weights_for_identical_policies_are_one() {
        let ep = episode(vec![0.0, 0.0, 1.0]);
        let pol = Uniform(2);
        let w = step_weights(&ep, &pol, &pol, &WeightOptions::default()).unwrap();
        assert_eq!(w.rho(), &[1.0, 1.0, 1.0]);
        assert_eq!(w.max_rho, 1.0);
    }

    #[test]
    fn deterministic_eval_against_uniform_behavior() {
        let ep = episode(vec![0.0, 0.0, 1.0]);
        let w = step_weights(
            &ep,
            &Uniform(2),
            &FixedAction(0, 2),
            &WeightOptions::default(),
        )
        .unwrap();
        assert_eq!(w.rho(), &[2.0, 2.0, 2.0]);
        assert_eq!(w.product_all(), 8.0);
    }

    #[test]
    fn unsupported_action_gives_zero_weight() {
        let ep = episode(vec![0.0, 1.0]);
        let w = step_weights(
            &ep,
            &Uniform(2),
            &FixedAction(1, 2),
            &WeightOptions::default(),
        )
        .unwrap();
        assert_eq!(w.rho()[0], 0.0);
        assert_eq!(w.product_all(), 0.0);
    }

    #[test]
    fn zero_behavior_probability_is_an_error() {
        let ep = episode(vec![1.0]);
        let err = step_weights(
            &ep,
            &FixedAction(1, 2),
            &Uniform(2),
            &WeightOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            CoreError::ZeroBehaviorProbability { t: 1, .. }
        ));
    }

    #[test]
    fn history_key_prefix_semantics() {
        let ep = Episode::new(
            vec![
                StateRef::Discrete(3),
                StateRef::Discrete(1),
                StateRef::Discrete(4),
            ],
            vec![1, 0, 1],
            vec![0.0; 3],
        )
        .unwrap();
        let k1 = history_key(&ep, 1).unwrap();
        assert_eq!(k1.discrete_key().unwrap(), vec![3]);
        let k2 = history_key(&ep, 2).unwrap();
        assert_eq!(k2.discrete_key().unwrap(), vec![3, 1, 1]);
        assert!(history_key(&ep, 4).is_err());
        assert!(history_key(&ep, 0).is_err());
    }

    #[test]
    fn history_keys_differ_when_prefix_action_differs() {
        let mk = |a: usize| {
            Episode::new(
                vec![StateRef::Discrete(0), StateRef::Discrete(0)],
                vec![a, 0],
                vec![0.0; 2],
            )
            .unwrap()
        };
        let ka = history_key(&mk(0), 2).unwrap();
        let kb = history_key(&mk(1), 2).unwrap();
        assert_ne!(ka.discrete_key().unwrap(), kb.discrete_key().unwrap());
    }

    #[test]
    fn dataset_rejects_mixed_horizons() {
        let eps = vec![episode(vec![1.0]), episode(vec![1.0, 2.0])];
        assert!(matches!(
            Dataset::new(eps, 0.99, vec![1]),
            Err(CoreError::HeterogeneousDataset(_))
        ));
    }

    #[test]
    fn dataset_rejects_out_of_range_action() {
        let ep = Episode::new(vec![StateRef::Discrete(0)], vec![3], vec![0.0]).unwrap();
        assert!(matches!(
            Dataset::new(vec![ep], 0.99, vec![2]),
            Err(CoreError::ActionOutOfRange { .. })
        ));
    }
}
