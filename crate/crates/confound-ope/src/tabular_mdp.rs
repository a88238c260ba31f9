//! Enumerated-state MDPs with exact planners.
//!
//! Transitions are stored as sparse per-(state, action) successor lists; this
//! keeps the 1442-state sepsis model small even though its dense tensor would
//! have ~16M entries. Policies are probability tables, optionally
//! time-indexed. Planners: infinite-horizon value iteration and policy
//! iteration for deriving reference policies, and finite-horizon backward
//! induction for exact policy values, which is what every experiment treats
//! as ground truth.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{CoreError, Dataset, Episode, Policy, StateRef};
use crate::exec::{self, ExecMode};
use crate::rng::substream;

const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("transition row ({s},{a}) sums to {sum}, expected 1")]
    BadRowSum { s: usize, a: usize, sum: f64 },
    #[error("negative probability {p} in transition row ({s},{a})")]
    NegativeProb { s: usize, a: usize, p: f64 },
    #[error("absorbing state {s} must self-loop with probability 1 and zero reward")]
    BadAbsorbing { s: usize },
    #[error("initial distribution sums to {0}, expected 1")]
    BadInitial(f64),
    #[error("policy row for state {s} sums to {sum}, expected 1")]
    BadPolicyRow { s: usize, sum: f64 },
    #[error("policy shape does not match MDP ({0})")]
    ShapeMismatch(String),
    #[error("planner did not converge after {0} iterations")]
    NonConvergence(usize),
    #[error("discount {0} unusable here")]
    BadDiscount(f64),
    #[error("epsilon {0} outside [0, 1)")]
    BadEpsilon(f64),
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("bad MDP file: {0}")]
    Format(String),
}

/// One entry of a sparse transition row.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Successor {
    pub state: usize,
    pub prob: f64,
    pub reward: f64,
}

/// Finite MDP with sparse transitions, an initial state distribution, an
/// absorbing-state mask, an episode horizon, and a discount factor.
/// Immutable after construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `transitions[s][a]` lists successors with positive probability.
    transitions: Vec<Vec<Vec<Successor>>>,
    initial: Vec<f64>,
    absorbing: Vec<bool>,
    horizon: usize,
    discount: f64,
}

impl TabularMdp {
    pub fn new(
        transitions: Vec<Vec<Vec<Successor>>>,
        initial: Vec<f64>,
        absorbing: Vec<bool>,
        horizon: usize,
        discount: f64,
    ) -> Result<Self, MdpError> {
        let n_states = transitions.len();
        if n_states == 0 || horizon == 0 {
            return Err(MdpError::ShapeMismatch("empty MDP".to_string()));
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(MdpError::BadDiscount(discount));
        }
        let n_actions = transitions[0].len();
        for (s, rows) in transitions.iter().enumerate() {
            if rows.len() != n_actions {
                return Err(MdpError::ShapeMismatch(format!(
                    "state {s} has {} action rows, expected {n_actions}",
                    rows.len()
                )));
            }
            for (a, row) in rows.iter().enumerate() {
                let mut sum = 0.0;
                for succ in row {
                    if succ.prob < 0.0 {
                        return Err(MdpError::NegativeProb {
                            s,
                            a,
                            p: succ.prob,
                        });
                    }
                    if succ.state >= n_states {
                        return Err(MdpError::ShapeMismatch(format!(
                            "successor {} out of range",
                            succ.state
                        )));
                    }
                    sum += succ.prob;
                }
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(MdpError::BadRowSum { s, a, sum });
                }
                if absorbing[s] {
                    let ok = row.len() == 1
                        && row[0].state == s
                        && (row[0].prob - 1.0).abs() <= ROW_SUM_TOL
                        && row[0].reward == 0.0;
                    if !ok {
                        return Err(MdpError::BadAbsorbing { s });
                    }
                }
            }
        }
        let init_sum: f64 = initial.iter().sum();
        if (init_sum - 1.0).abs() > ROW_SUM_TOL || initial.iter().any(|&p| p < 0.0) {
            return Err(MdpError::BadInitial(init_sum));
        }
        if initial.len() != n_states || absorbing.len() != n_states {
            return Err(MdpError::ShapeMismatch(
                "initial/absorbing length mismatch".to_string(),
            ));
        }
        Ok(TabularMdp {
            n_states,
            n_actions,
            transitions,
            initial,
            absorbing,
            horizon,
            discount,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn is_absorbing(&self, s: usize) -> bool {
        self.absorbing[s]
    }

    pub fn successors(&self, s: usize, a: usize) -> &[Successor] {
        &self.transitions[s][a]
    }

    /// Expected immediate reward of `(s, a)`.
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.transitions[s][a]
            .iter()
            .map(|succ| succ.prob * succ.reward)
            .sum()
    }

    pub fn save_json(&self, path: &Path) -> Result<(), MdpError> {
        let out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(out, self).map_err(|e| MdpError::Format(e.to_string()))
    }

    pub fn load_json(path: &Path) -> Result<Self, MdpError> {
        let input = BufReader::new(File::open(path)?);
        let raw: TabularMdp =
            serde_json::from_reader(input).map_err(|e| MdpError::Format(e.to_string()))?;
        // Re-validate: serde bypasses the constructor.
        TabularMdp::new(
            raw.transitions,
            raw.initial,
            raw.absorbing,
            raw.horizon,
            raw.discount,
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
enum PolicyTable {
    Stationary(Vec<Vec<f64>>),
    /// One table per step, `tables[t-1]` used at step `t`; the last table is
    /// reused past the end.
    TimeIndexed(Vec<Vec<Vec<f64>>>),
}

/// Probability table over actions per state, optionally time-indexed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TabularPolicy {
    table: PolicyTable,
    n_actions: usize,
}

fn check_rows(rows: &[Vec<f64>], n_actions: usize) -> Result<(), MdpError> {
    for (s, row) in rows.iter().enumerate() {
        if row.len() != n_actions {
            return Err(MdpError::ShapeMismatch(format!(
                "row {s} has {} entries, expected {n_actions}",
                row.len()
            )));
        }
        if row.iter().any(|&p| p < 0.0) {
            return Err(MdpError::BadPolicyRow {
                s,
                sum: row.iter().sum(),
            });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(MdpError::BadPolicyRow { s, sum });
        }
    }
    Ok(())
}

impl TabularPolicy {
    pub fn stationary(rows: Vec<Vec<f64>>) -> Result<Self, MdpError> {
        let n_actions = rows.first().map(|r| r.len()).unwrap_or(0);
        check_rows(&rows, n_actions)?;
        Ok(TabularPolicy {
            table: PolicyTable::Stationary(rows),
            n_actions,
        })
    }

    pub fn time_indexed(tables: Vec<Vec<Vec<f64>>>) -> Result<Self, MdpError> {
        let n_actions = tables
            .first()
            .and_then(|t| t.first())
            .map(|r| r.len())
            .unwrap_or(0);
        for rows in &tables {
            check_rows(rows, n_actions)?;
        }
        Ok(TabularPolicy {
            table: PolicyTable::TimeIndexed(tables),
            n_actions,
        })
    }

    pub fn deterministic(n_states: usize, n_actions: usize, actions: &[usize]) -> Self {
        let rows = (0..n_states)
            .map(|s| {
                let mut row = vec![0.0; n_actions];
                row[actions[s]] = 1.0;
                row
            })
            .collect();
        TabularPolicy {
            table: PolicyTable::Stationary(rows),
            n_actions,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_states(&self) -> usize {
        match &self.table {
            PolicyTable::Stationary(rows) => rows.len(),
            PolicyTable::TimeIndexed(tables) => tables[0].len(),
        }
    }

    /// Probability row at 1-based step `t`.
    pub fn probs(&self, t: usize, s: usize) -> &[f64] {
        match &self.table {
            PolicyTable::Stationary(rows) => &rows[s],
            PolicyTable::TimeIndexed(tables) => {
                let idx = (t - 1).min(tables.len() - 1);
                &tables[idx][s]
            }
        }
    }

    /// Greedy action per state; ties break toward the lowest index.
    pub fn greedy_actions(&self, t: usize) -> Vec<usize> {
        (0..self.n_states())
            .map(|s| {
                let row = self.probs(t, s);
                let mut best = 0;
                for (a, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    /// Mixture `(1-epsilon) * self + epsilon * uniform`.
    pub fn soften(&self, epsilon: f64) -> Result<TabularPolicy, MdpError> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(MdpError::BadEpsilon(epsilon));
        }
        let u = epsilon / self.n_actions as f64;
        let mix = |rows: &Vec<Vec<f64>>| {
            rows.iter()
                .map(|row| row.iter().map(|p| (1.0 - epsilon) * p + u).collect())
                .collect()
        };
        let table = match &self.table {
            PolicyTable::Stationary(rows) => PolicyTable::Stationary(mix(rows)),
            PolicyTable::TimeIndexed(tables) => {
                PolicyTable::TimeIndexed(tables.iter().map(mix).collect())
            }
        };
        Ok(TabularPolicy {
            table,
            n_actions: self.n_actions,
        })
    }

    /// Replaces the row for `state` at every step.
    pub fn set_row_all_steps(&mut self, state: usize, row: Vec<f64>) {
        match &mut self.table {
            PolicyTable::Stationary(rows) => rows[state] = row,
            PolicyTable::TimeIndexed(tables) => {
                for rows in tables.iter_mut() {
                    rows[state] = row.clone();
                }
            }
        }
    }
}

impl Policy for TabularPolicy {
    fn action_probs(&self, t: usize, state: &StateRef) -> Result<Vec<f64>, CoreError> {
        Ok(self.probs(t, state.index()?).to_vec())
    }

    fn action_prob(&self, t: usize, state: &StateRef, action: usize) -> Result<f64, CoreError> {
        let row = self.probs(t, state.index()?);
        row.get(action).copied().ok_or(CoreError::ActionOutOfRange {
            t,
            action,
            cardinality: row.len(),
        })
    }
}

/// Mixture `weight * a + (1-weight) * b` of two stationary policies.
pub fn mix_policies(
    a: &TabularPolicy,
    b: &TabularPolicy,
    weight: f64,
) -> Result<TabularPolicy, MdpError> {
    let rows = (0..a.n_states())
        .map(|s| {
            a.probs(1, s)
                .iter()
                .zip(b.probs(1, s))
                .map(|(&pa, &pb)| weight * pa + (1.0 - weight) * pb)
                .collect()
        })
        .collect();
    TabularPolicy::stationary(rows)
}

const SWEEP_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 200_000;

fn greedy_from_values(mdp: &TabularMdp, values: &[f64]) -> Vec<usize> {
    (0..mdp.n_states)
        .map(|s| {
            let mut best_a = 0;
            let mut best_q = f64::NEG_INFINITY;
            for a in 0..mdp.n_actions {
                let q: f64 = mdp.transitions[s][a]
                    .iter()
                    .map(|succ| succ.prob * (succ.reward + mdp.discount * values[succ.state]))
                    .sum();
                // Strict improvement only: ties break toward the lowest index.
                if q > best_q + 1e-13 {
                    best_q = q;
                    best_a = a;
                }
            }
            best_a
        })
        .collect()
}

/// Infinite-horizon discounted value iteration. Returns the optimal value
/// function and the greedy deterministic policy. Requires `discount < 1`.
pub fn value_iteration(mdp: &TabularMdp) -> Result<(Vec<f64>, TabularPolicy), MdpError> {
    if mdp.discount >= 1.0 {
        return Err(MdpError::BadDiscount(mdp.discount));
    }
    let mut values = vec![0.0; mdp.n_states];
    for _ in 0..MAX_SWEEPS {
        let mut delta = 0.0_f64;
        let next: Vec<f64> = (0..mdp.n_states)
            .map(|s| {
                (0..mdp.n_actions)
                    .map(|a| {
                        mdp.transitions[s][a]
                            .iter()
                            .map(|succ| {
                                succ.prob * (succ.reward + mdp.discount * values[succ.state])
                            })
                            .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        for s in 0..mdp.n_states {
            delta = delta.max((next[s] - values[s]).abs());
        }
        values = next;
        if delta < SWEEP_TOL {
            let actions = greedy_from_values(mdp, &values);
            let policy = TabularPolicy::deterministic(mdp.n_states, mdp.n_actions, &actions);
            return Ok((values, policy));
        }
    }
    Err(MdpError::NonConvergence(MAX_SWEEPS))
}

fn evaluate_deterministic(mdp: &TabularMdp, actions: &[usize]) -> Result<Vec<f64>, MdpError> {
    let mut values = vec![0.0; mdp.n_states];
    for _ in 0..MAX_SWEEPS {
        let mut delta = 0.0_f64;
        for s in 0..mdp.n_states {
            let v: f64 = mdp.transitions[s][actions[s]]
                .iter()
                .map(|succ| succ.prob * (succ.reward + mdp.discount * values[succ.state]))
                .sum();
            delta = delta.max((v - values[s]).abs());
            values[s] = v;
        }
        if delta < SWEEP_TOL {
            return Ok(values);
        }
    }
    Err(MdpError::NonConvergence(MAX_SWEEPS))
}

pub const POLICY_ITERATION_MAX_ITERS: usize = 1000;

/// Infinite-horizon discounted policy iteration: iterative evaluation plus
/// greedy improvement with lowest-index tie-breaking, so the result is
/// deterministic across runs. Requires `discount < 1`.
pub fn policy_iteration(mdp: &TabularMdp) -> Result<TabularPolicy, MdpError> {
    if mdp.discount >= 1.0 {
        return Err(MdpError::BadDiscount(mdp.discount));
    }
    let mut actions = vec![0usize; mdp.n_states];
    for _ in 0..POLICY_ITERATION_MAX_ITERS {
        let values = evaluate_deterministic(mdp, &actions)?;
        let improved = greedy_from_values(mdp, &values);
        if improved == actions {
            return Ok(TabularPolicy::deterministic(
                mdp.n_states,
                mdp.n_actions,
                &actions,
            ));
        }
        actions = improved;
    }
    Err(MdpError::NonConvergence(POLICY_ITERATION_MAX_ITERS))
}

/// Exact finite-horizon discounted value of `policy` from the initial
/// distribution, by backward induction over the episode horizon.
pub fn exact_policy_value(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<f64, MdpError> {
    if policy.n_actions() != mdp.n_actions || policy.n_states() != mdp.n_states {
        return Err(MdpError::ShapeMismatch(format!(
            "policy {}x{} vs MDP {}x{}",
            policy.n_states(),
            policy.n_actions(),
            mdp.n_states,
            mdp.n_actions
        )));
    }
    let mut next = vec![0.0; mdp.n_states];
    for t in (1..=mdp.horizon).rev() {
        let cur: Vec<f64> = (0..mdp.n_states)
            .map(|s| {
                policy
                    .probs(t, s)
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(a, &p)| {
                        p * mdp.transitions[s][a]
                            .iter()
                            .map(|succ| {
                                succ.prob * (succ.reward + mdp.discount * next[succ.state])
                            })
                            .sum::<f64>()
                    })
                    .sum()
            })
            .collect();
        next = cur;
    }
    Ok(mdp
        .initial
        .iter()
        .zip(&next)
        .map(|(&p, &v)| p * v)
        .sum())
}

fn sample_cdf<R: Rng>(rng: &mut R, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        cum += p;
        last = i;
        if u < cum {
            return i;
        }
    }
    last
}

/// Samples `n` episodes under `policy`, recording the policy's own action
/// probabilities in both oracle fields. Episode `i` depends only on
/// `(seed, i)`.
pub fn sample_episodes(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    n: usize,
    seed: u64,
    exec_mode: ExecMode,
) -> Result<Dataset, MdpError> {
    let episodes = exec::map_range(exec_mode, n, |i| {
        let mut rng = substream(seed, "mdp-rollout", i as u64);
        let mut s = sample_cdf(&mut rng, mdp.initial.iter().copied());
        let mut states = Vec::with_capacity(mdp.horizon);
        let mut actions = Vec::with_capacity(mdp.horizon);
        let mut rewards = Vec::with_capacity(mdp.horizon);
        let mut probs = Vec::with_capacity(mdp.horizon);
        for t in 1..=mdp.horizon {
            let row = policy.probs(t, s);
            let a = sample_cdf(&mut rng, row.iter().copied());
            let succ_row = &mdp.transitions[s][a];
            let j = sample_cdf(&mut rng, succ_row.iter().map(|succ| succ.prob));
            states.push(StateRef::Discrete(s));
            actions.push(a);
            rewards.push(succ_row[j].reward);
            probs.push(row[a]);
            s = succ_row[j].state;
        }
        let mut ep = Episode::new(states, actions, rewards).expect("rollout episode");
        ep.behavior_probs_marginal = Some(probs.clone());
        ep.behavior_probs_conditional = Some(probs);
        ep
    });
    Ok(Dataset::new(
        episodes,
        mdp.discount,
        vec![mdp.n_actions; mdp.horizon],
    )?)
}

/// Rebuilds the MDP with each transition row replaced by an empirical
/// estimate from `samples_per_pair` draws, mirroring a simulator whose
/// dynamics are estimated before planning. Absorbing rows are kept exact.
pub fn estimate_transitions(
    mdp: &TabularMdp,
    samples_per_pair: usize,
    seed: u64,
    exec_mode: ExecMode,
) -> Result<TabularMdp, MdpError> {
    let rows = exec::map_range(exec_mode, mdp.n_states, |s| {
        (0..mdp.n_actions)
            .map(|a| {
                if mdp.absorbing[s] {
                    return mdp.transitions[s][a].clone();
                }
                let mut rng = substream(seed, "estimate-transitions", (s * mdp.n_actions + a) as u64);
                let row = &mdp.transitions[s][a];
                let mut counts = vec![0usize; row.len()];
                for _ in 0..samples_per_pair {
                    let j = sample_cdf(&mut rng, row.iter().map(|succ| succ.prob));
                    counts[j] += 1;
                }
                row.iter()
                    .zip(&counts)
                    .filter(|(_, &c)| c > 0)
                    .map(|(succ, &c)| Successor {
                        state: succ.state,
                        prob: c as f64 / samples_per_pair as f64,
                        reward: succ.reward,
                    })
                    .collect()
            })
            .collect()
    });
    TabularMdp::new(
        rows,
        mdp.initial.clone(),
        mdp.absorbing.clone(),
        mdp.horizon,
        mdp.discount,
    )
}

/// Uniformly random MDP for oracle tests: dense transitions with simplex
/// rows, rewards in [-1, 1], uniform initial distribution, no absorbing
/// states.
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    discount: f64,
    seed: u64,
) -> TabularMdp {
    let mut rng = substream(seed, "random-mdp", 0);
    let transitions = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| {
                    let raw: Vec<f64> = (0..n_states)
                        .map(|_| -f64::ln(1.0 - rng.gen::<f64>()))
                        .collect();
                    let total: f64 = raw.iter().sum();
                    raw.into_iter()
                        .enumerate()
                        .map(|(s2, w)| Successor {
                            state: s2,
                            prob: w / total,
                            reward: rng.gen::<f64>() * 2.0 - 1.0,
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let initial = vec![1.0 / n_states as f64; n_states];
    TabularMdp::new(
        transitions,
        initial,
        vec![false; n_states],
        horizon,
        discount,
    )
    .expect("random MDP is valid by construction")
}

/// Random stochastic policy with rows floored away from zero, for overlap in
/// oracle tests.
pub fn random_policy(n_states: usize, n_actions: usize, floor: f64, seed: u64) -> TabularPolicy {
    let mut rng = substream(seed, "random-policy", 0);
    let rows = (0..n_states)
        .map(|_| {
            let raw: Vec<f64> = (0..n_actions)
                .map(|_| floor - f64::ln(1.0 - rng.gen::<f64>()))
                .collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|w| w / total).collect()
        })
        .collect();
    TabularPolicy::stationary(rows).expect("rows normalized")
}
