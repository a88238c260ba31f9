//! Estimating the marginalized behavior policy from logged episodes.
//!
//! Two fitted representations share the [`Policy`] interface: Laplace-smoothed
//! frequency tables over discrete history buckets, and per-step multinomial
//! logistic models over feature states. Both floor their emitted
//! probabilities at a configurable `p_min` so downstream importance ratios
//! stay bounded, and both serialize to JSON for audit and reuse.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{CoreError, Dataset, Policy, StateRef};
use crate::rng::substream;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("dataset has no episodes")]
    EmptyDataset,
    #[error("solver did not converge after {iters} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence { iters: usize, grad_norm: f64 },
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Core(#[from] CoreError),
}

/// Maps a state to a discrete bucket key.
///
/// `FeatureKey` reads the listed feature positions and rounds them to
/// integers, for feature vectors whose confounding-relevant coordinates are
/// categorical (treatment arm, responder status).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateBucketer {
    DiscreteState,
    Unit,
    FeatureKey { indices: Vec<usize> },
}

pub type BucketKey = Vec<i64>;

/// JSON-friendly encoding of bucket tables: sorted pair lists instead of
/// maps, since JSON map keys must be strings.
pub(crate) mod bucket_table_serde {
    use super::BucketKey;
    use serde::de::Deserializer;
    use serde::ser::Serializer;
    use serde::{Deserialize, Serialize};
    use std::collections::BTreeMap;

    pub fn serialize<S, V>(map: &BTreeMap<BucketKey, V>, s: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        V: Serialize,
    {
        let pairs: Vec<(&BucketKey, &V)> = map.iter().collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D, V>(d: D) -> Result<BTreeMap<BucketKey, V>, D::Error>
    where
        D: Deserializer<'de>,
        V: Deserialize<'de>,
    {
        let pairs: Vec<(BucketKey, V)> = Vec::deserialize(d)?;
        Ok(pairs.into_iter().collect())
    }
}

impl StateBucketer {
    pub fn key(&self, state: &StateRef) -> Result<BucketKey, CoreError> {
        match self {
            StateBucketer::DiscreteState => Ok(vec![state.index()? as i64]),
            StateBucketer::Unit => Ok(Vec::new()),
            StateBucketer::FeatureKey { indices } => {
                let x = state.features()?;
                indices
                    .iter()
                    .map(|&i| {
                        x.get(i).map(|v| v.round() as i64).ok_or(
                            CoreError::HeterogeneousDataset(format!(
                                "feature index {i} out of range (dim {})",
                                x.len()
                            )),
                        )
                    })
                    .collect()
            }
        }
    }
}

/// One group of steps sharing a probability table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimeBlockSpec {
    /// 1-based steps in this block.
    pub steps: Vec<usize>,
    pub bucketer: StateBucketer,
}

impl TimeBlockSpec {
    /// One block per step.
    pub fn singletons(horizon: usize, bucketer: StateBucketer) -> Vec<TimeBlockSpec> {
        (1..=horizon)
            .map(|t| TimeBlockSpec {
                steps: vec![t],
                bucketer: bucketer.clone(),
            })
            .collect()
    }

    /// The first step alone, the rest pooled: the layout used when only the
    /// first decision is confounded.
    pub fn first_vs_rest(horizon: usize, bucketer: StateBucketer) -> Vec<TimeBlockSpec> {
        vec![
            TimeBlockSpec {
                steps: vec![1],
                bucketer: bucketer.clone(),
            },
            TimeBlockSpec {
                steps: (2..=horizon).collect(),
                bucketer,
            },
        ]
    }
}

/// Smoothing and flooring knobs shared by the fitters.
///
/// `alpha` is the Laplace pseudo-count per action. `p_min` floors every
/// emitted probability; rows touched by the floor are renormalized.
#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
pub struct FitOptions {
    pub alpha: f64,
    pub p_min: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            alpha: 1.0,
            p_min: 1e-4,
        }
    }
}

fn floor_and_renormalize(row: &mut [f64], p_min: f64) {
    let mut touched = false;
    for p in row.iter_mut() {
        if *p < p_min {
            *p = p_min;
            touched = true;
        }
    }
    if touched {
        let sum: f64 = row.iter().sum();
        for p in row.iter_mut() {
            *p /= sum;
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct FittedBlock {
    steps: Vec<usize>,
    bucketer: StateBucketer,
    n_actions: usize,
    /// Sorted map so that serialization and iteration are deterministic.
    #[serde(with = "bucket_table_serde")]
    table: BTreeMap<BucketKey, Vec<f64>>,
    /// Row served for buckets never seen during fitting.
    unseen: Vec<f64>,
}

/// Frequency-table behavior policy over time blocks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TabularFit {
    blocks: Vec<FittedBlock>,
}

impl TabularFit {
    fn block_for(&self, t: usize) -> Option<&FittedBlock> {
        self.blocks.iter().find(|b| b.steps.contains(&t))
    }

    /// Number of distinct buckets fitted in the block containing step `t`.
    pub fn bucket_count(&self, t: usize) -> usize {
        self.block_for(t).map(|b| b.table.len()).unwrap_or(0)
    }
}

/// Per-step multinomial logistic model: class weights over
/// `[1, state features...]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogisticStepModel {
    /// `weights[k]` scores class `k`; length `n_features + 1`.
    pub weights: Vec<Vec<f64>>,
    pub p_min: f64,
    pub iterations: usize,
}

impl LogisticStepModel {
    pub fn predict(&self, features: &[f64]) -> Vec<f64> {
        let mut scores: Vec<f64> = self
            .weights
            .iter()
            .map(|w| {
                let mut z = w[0];
                for (j, &x) in features.iter().enumerate() {
                    z += w[j + 1] * x;
                }
                z
            })
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for z in scores.iter_mut() {
            *z = (*z - max).exp();
            sum += *z;
        }
        for z in scores.iter_mut() {
            *z /= sum;
        }
        floor_and_renormalize(&mut scores, self.p_min);
        scores
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogisticFit {
    steps: Vec<LogisticStepModel>,
}

/// A fitted behavior policy: frequency tables or logistic models.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "repr", rename_all = "snake_case")]
pub enum PolicyRepr {
    Tabular(TabularFit),
    Logistic(LogisticFit),
}

impl Policy for PolicyRepr {
    fn action_probs(&self, t: usize, state: &StateRef) -> Result<Vec<f64>, CoreError> {
        match self {
            PolicyRepr::Tabular(fit) => {
                let block = fit.block_for(t).ok_or(CoreError::StepOutOfRange {
                    t,
                    horizon: fit
                        .blocks
                        .iter()
                        .flat_map(|b| b.steps.iter().copied())
                        .max()
                        .unwrap_or(0),
                })?;
                let key = block.bucketer.key(state)?;
                Ok(block
                    .table
                    .get(&key)
                    .unwrap_or(&block.unseen)
                    .clone())
            }
            PolicyRepr::Logistic(fit) => {
                let model = fit.steps.get(t - 1).ok_or(CoreError::StepOutOfRange {
                    t,
                    horizon: fit.steps.len(),
                })?;
                Ok(model.predict(state.features()?))
            }
        }
    }
}

impl PolicyRepr {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy repr serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, FitError> {
        serde_json::from_str(s).map_err(|e| FitError::InvalidConfig(format!("bad policy JSON: {e}")))
    }
}

fn check_partition(blocks: &[TimeBlockSpec], horizon: usize) -> Result<(), FitError> {
    let mut seen = vec![false; horizon + 1];
    for block in blocks {
        for &t in &block.steps {
            if t == 0 || t > horizon {
                return Err(FitError::InvalidConfig(format!(
                    "block step {t} outside 1..={horizon}"
                )));
            }
            if seen[t] {
                return Err(FitError::InvalidConfig(format!(
                    "step {t} appears in two blocks"
                )));
            }
            seen[t] = true;
        }
    }
    if let Some(t) = (1..=horizon).find(|&t| !seen[t]) {
        return Err(FitError::InvalidConfig(format!(
            "step {t} not covered by any block"
        )));
    }
    Ok(())
}

/// Laplace-smoothed empirical action frequencies per (time block, bucket).
///
/// Every step inside one block must share an action-set cardinality. Unseen
/// buckets fall back to the uniform row.
pub fn fit_tabular(
    dataset: &Dataset,
    blocks: &[TimeBlockSpec],
    opts: &FitOptions,
) -> Result<PolicyRepr, FitError> {
    if dataset.is_empty() {
        return Err(FitError::EmptyDataset);
    }
    if opts.alpha < 0.0 {
        return Err(FitError::InvalidConfig(format!(
            "negative smoothing {}",
            opts.alpha
        )));
    }
    check_partition(blocks, dataset.horizon())?;
    let cards = dataset.action_cardinalities();
    let mut fitted = Vec::with_capacity(blocks.len());
    for block in blocks {
        let n_actions = cards[block.steps[0] - 1];
        if block.steps.iter().any(|&t| cards[t - 1] != n_actions) {
            return Err(FitError::InvalidConfig(
                "steps in one block must share an action cardinality".to_string(),
            ));
        }
        let mut counts: BTreeMap<BucketKey, Vec<f64>> = BTreeMap::new();
        for ep in dataset.episodes() {
            for &t in &block.steps {
                let key = block.bucketer.key(ep.state_at(t)?)?;
                let row = counts.entry(key).or_insert_with(|| vec![0.0; n_actions]);
                row[ep.action_at(t)?] += 1.0;
            }
        }
        let table: BTreeMap<BucketKey, Vec<f64>> = counts
            .into_iter()
            .map(|(key, row)| {
                let total: f64 = row.iter().sum();
                let denom = total + opts.alpha * n_actions as f64;
                let mut probs: Vec<f64> =
                    row.into_iter().map(|c| (c + opts.alpha) / denom).collect();
                floor_and_renormalize(&mut probs, opts.p_min);
                (key, probs)
            })
            .collect();
        fitted.push(FittedBlock {
            steps: block.steps.clone(),
            bucketer: block.bucketer.clone(),
            n_actions,
            table,
            unseen: vec![1.0 / n_actions as f64; n_actions],
        });
    }
    Ok(PolicyRepr::Tabular(TabularFit { blocks: fitted }))
}

/// Options for the logistic fitter.
#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
pub struct LogisticOptions {
    /// Ridge strength on all weights; keeps the multinomial parameterization
    /// identified and the Hessian positive definite.
    pub ridge: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub p_min: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            ridge: 1e-4,
            grad_tol: 1e-8,
            max_iters: 100,
            p_min: 1e-4,
        }
    }
}

/// Solves `L x = b` in place given the lower Cholesky factor.
fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[i][j] * y[j];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for j in i + 1..n {
            s -= l[j][i] * x[j];
        }
        x[i] = s / l[i][i];
    }
    x
}

/// Lower Cholesky factor, or `None` if the matrix is not positive definite.
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

struct LogisticProblem {
    /// Row-major design matrix including the leading intercept column.
    phi: Vec<f64>,
    labels: Vec<usize>,
    n: usize,
    d: usize,
    k: usize,
    ridge: f64,
}

impl LogisticProblem {
    fn probs(&self, theta: &[f64], i: usize, out: &mut [f64]) {
        let phi = &self.phi[i * self.d..(i + 1) * self.d];
        let mut max = f64::NEG_INFINITY;
        for k in 0..self.k {
            let w = &theta[k * self.d..(k + 1) * self.d];
            let z: f64 = w.iter().zip(phi).map(|(a, b)| a * b).sum();
            out[k] = z;
            max = max.max(z);
        }
        let mut sum = 0.0;
        for z in out.iter_mut() {
            *z = (*z - max).exp();
            sum += *z;
        }
        for z in out.iter_mut() {
            *z /= sum;
        }
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        let mut p = vec![0.0; self.k];
        let mut nll = 0.0;
        for i in 0..self.n {
            self.probs(theta, i, &mut p);
            nll -= p[self.labels[i]].max(1e-300).ln();
        }
        let penalty: f64 = theta.iter().map(|w| w * w).sum::<f64>() * self.ridge / 2.0;
        nll / self.n as f64 + penalty
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.k * self.d];
        let mut p = vec![0.0; self.k];
        for i in 0..self.n {
            self.probs(theta, i, &mut p);
            let phi = &self.phi[i * self.d..(i + 1) * self.d];
            for k in 0..self.k {
                let resid = p[k] - if self.labels[i] == k { 1.0 } else { 0.0 };
                let g = &mut grad[k * self.d..(k + 1) * self.d];
                for (gj, &xj) in g.iter_mut().zip(phi) {
                    *gj += resid * xj;
                }
            }
        }
        for (j, g) in grad.iter_mut().enumerate() {
            *g = *g / self.n as f64 + self.ridge * theta[j];
        }
        grad
    }

    fn hessian(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        let m = self.k * self.d;
        let mut h = vec![vec![0.0; m]; m];
        let mut p = vec![0.0; self.k];
        for i in 0..self.n {
            self.probs(theta, i, &mut p);
            let phi = &self.phi[i * self.d..(i + 1) * self.d];
            for k in 0..self.k {
                for l in 0..=k {
                    let c = if k == l {
                        p[k] * (1.0 - p[k])
                    } else {
                        -p[k] * p[l]
                    };
                    if c == 0.0 {
                        continue;
                    }
                    for r in 0..self.d {
                        let cr = c * phi[r];
                        for s in 0..self.d {
                            h[k * self.d + r][l * self.d + s] += cr * phi[s];
                        }
                    }
                }
            }
        }
        // Mirror the lower blocks and add the ridge.
        for r in 0..m {
            for c in r + 1..m {
                h[r][c] = h[c][r];
            }
        }
        for (r, row) in h.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v /= self.n as f64;
            }
            row[r] += self.ridge;
        }
        h
    }
}

/// Multinomial logistic regression for the step-`t` action given the step-`t`
/// state features, by ridge-damped Newton iterations to the gradient
/// tolerance. Deterministic given the data.
pub fn fit_logistic_step(
    dataset: &Dataset,
    t: usize,
    opts: &LogisticOptions,
) -> Result<LogisticStepModel, FitError> {
    if dataset.is_empty() {
        return Err(FitError::EmptyDataset);
    }
    if t == 0 || t > dataset.horizon() {
        return Err(FitError::InvalidConfig(format!(
            "step {t} outside 1..={}",
            dataset.horizon()
        )));
    }
    let k = dataset.action_cardinalities()[t - 1];
    let first = dataset.episodes()[0].state_at(t)?.features()?;
    let d = first.len() + 1;
    let n = dataset.len();
    let mut phi = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for ep in dataset.episodes() {
        let x = ep.state_at(t)?.features()?;
        if x.len() + 1 != d {
            return Err(FitError::InvalidConfig(format!(
                "inconsistent feature dimension at step {t}"
            )));
        }
        phi.push(1.0);
        phi.extend_from_slice(x);
        labels.push(ep.action_at(t)?);
    }
    let problem = LogisticProblem {
        phi,
        labels,
        n,
        d,
        k,
        ridge: opts.ridge,
    };
    let m = k * d;
    let mut theta = vec![0.0; m];
    let mut objective = problem.objective(&theta);
    for iter in 0..opts.max_iters {
        let grad = problem.gradient(&theta);
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm < opts.grad_tol {
            return Ok(LogisticStepModel {
                weights: theta.chunks(d).map(|w| w.to_vec()).collect(),
                p_min: opts.p_min,
                iterations: iter,
            });
        }
        let hess = problem.hessian(&theta);
        let l = cholesky(&hess).ok_or(FitError::NonConvergence {
            iters: iter,
            grad_norm,
        })?;
        let step = cholesky_solve(&l, &grad);
        // Newton with step halving; bail out if no progress is possible.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = theta
                .iter()
                .zip(&step)
                .map(|(w, s)| w - alpha * s)
                .collect();
            let trial_obj = problem.objective(&trial);
            if trial_obj <= objective {
                theta = trial;
                objective = trial_obj;
                accepted = true;
                break;
            }
            alpha /= 2.0;
        }
        if !accepted {
            return Err(FitError::NonConvergence {
                iters: iter,
                grad_norm,
            });
        }
    }
    let grad_norm = problem
        .gradient(&theta)
        .iter()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if grad_norm < opts.grad_tol {
        Ok(LogisticStepModel {
            weights: theta.chunks(d).map(|w| w.to_vec()).collect(),
            p_min: opts.p_min,
            iterations: opts.max_iters,
        })
    } else {
        Err(FitError::NonConvergence {
            iters: opts.max_iters,
            grad_norm,
        })
    }
}

/// Logistic models for every step.
pub fn fit_logistic(dataset: &Dataset, opts: &LogisticOptions) -> Result<PolicyRepr, FitError> {
    let steps = (1..=dataset.horizon())
        .map(|t| fit_logistic_step(dataset, t, opts))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PolicyRepr::Logistic(LogisticFit { steps }))
}

/// Seeded split: fits on a `split_ratio` share of the episodes, returns the
/// fitted policy together with the held-out remainder for bound estimation.
pub fn split_fit<F>(
    dataset: &Dataset,
    split_ratio: f64,
    seed: u64,
    fitter: F,
) -> Result<(PolicyRepr, Dataset), FitError>
where
    F: FnOnce(&Dataset) -> Result<PolicyRepr, FitError>,
{
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(FitError::InvalidConfig(format!(
            "split ratio {split_ratio} outside (0, 1)"
        )));
    }
    let n = dataset.len();
    let n_fit = ((n as f64) * split_ratio).round() as usize;
    if n_fit == 0 || n_fit == n {
        return Err(FitError::InvalidConfig(format!(
            "split of {n} episodes at ratio {split_ratio} leaves an empty half"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut substream(seed, "split-fit", 0));
    let fit_idx = &indices[..n_fit];
    let held_idx = &indices[n_fit..];
    let fit_half = dataset.subset(fit_idx)?;
    let held_half = dataset.subset(held_idx)?;
    let policy = fitter(&fit_half)?;
    Ok((policy, held_half))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::Episode;
    use rand::Rng;

    fn discrete_dataset() -> Dataset {
        // State 0 seen 10 times: action 1 taken 7 times, action 0 taken 3.
        let mut eps = Vec::new();
        for i in 0..10 {
            let a = if i < 7 { 1 } else { 0 };
            eps.push(
                Episode::new(vec![StateRef::Discrete(0)], vec![a], vec![0.0]).unwrap(),
            );
        }
        Dataset::new(eps, 0.99, vec![8]).unwrap()
    }

    #[test]
    fn laplace_smoothing_matches_closed_form() {
        let ds = discrete_dataset();
        let fit = fit_tabular(
            &ds,
            &TimeBlockSpec::singletons(1, StateBucketer::DiscreteState),
            &FitOptions {
                alpha: 1.0,
                p_min: 0.0,
            },
        )
        .unwrap();
        let p = fit
            .action_prob(1, &StateRef::Discrete(0), 1)
            .unwrap();
        assert!((p - (7.0 + 1.0) / (10.0 + 8.0)).abs() < 1e-12);
    }

    #[test]
    fn unseen_bucket_returns_uniform() {
        let ds = discrete_dataset();
        let fit = fit_tabular(
            &ds,
            &TimeBlockSpec::singletons(1, StateBucketer::DiscreteState),
            &FitOptions::default(),
        )
        .unwrap();
        let row = fit.action_probs(1, &StateRef::Discrete(5)).unwrap();
        for p in row {
            assert!((p - 1.0 / 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_row_is_floored_and_renormalized() {
        // All ten samples take action 1; alpha = 0 would give a 0/1 row.
        let eps: Vec<Episode> = (0..10)
            .map(|_| Episode::new(vec![StateRef::Discrete(0)], vec![1], vec![0.0]).unwrap())
            .collect();
        let ds = Dataset::new(eps, 0.99, vec![2]).unwrap();
        let fit = fit_tabular(
            &ds,
            &TimeBlockSpec::singletons(1, StateBucketer::DiscreteState),
            &FitOptions {
                alpha: 0.0,
                p_min: 1e-4,
            },
        )
        .unwrap();
        let row = fit.action_probs(1, &StateRef::Discrete(0)).unwrap();
        assert!(row[0] > 0.0 && row[0] < 1e-3);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn feature_dataset(n: usize, signal: bool, seed: u64) -> Dataset {
        let mut rng = substream(seed, "test-logistic", 0);
        let eps: Vec<Episode> = (0..n)
            .map(|_| {
                let x: f64 = rng.gen::<f64>() * 2.0 - 1.0;
                let p = if signal {
                    1.0 / (1.0 + (-3.0 * x).exp())
                } else {
                    0.5
                };
                let a = usize::from(rng.gen::<f64>() < p);
                Episode::new(vec![StateRef::Features(vec![x])], vec![a], vec![0.0]).unwrap()
            })
            .collect();
        Dataset::new(eps, 1.0, vec![2]).unwrap()
    }

    #[test]
    fn no_signal_gives_intercept_only_predictions() {
        let ds = feature_dataset(4000, false, 1);
        let fit = fit_logistic(&ds, &LogisticOptions::default()).unwrap();
        let p = fit
            .action_prob(1, &StateRef::Features(vec![0.3]), 1)
            .unwrap();
        assert!((p - 0.5).abs() < 0.05, "p = {p}");
    }

    #[test]
    fn recovers_logistic_signal() {
        let ds = feature_dataset(20_000, true, 2);
        let fit = fit_logistic(&ds, &LogisticOptions::default()).unwrap();
        let hi = fit
            .action_prob(1, &StateRef::Features(vec![1.0]), 1)
            .unwrap();
        let lo = fit
            .action_prob(1, &StateRef::Features(vec![-1.0]), 1)
            .unwrap();
        let expect_hi = 1.0 / (1.0 + (-3.0_f64).exp());
        assert!((hi - expect_hi).abs() < 0.05, "hi = {hi}");
        assert!((lo - (1.0 - expect_hi)).abs() < 0.05, "lo = {lo}");
    }

    #[test]
    fn separable_data_needs_ridge() {
        // Perfectly separable labels: unpenalized likelihood has no maximizer.
        let eps: Vec<Episode> = (0..40)
            .map(|i| {
                let x = if i % 2 == 0 { 1.0 } else { -1.0 };
                let a = usize::from(i % 2 == 0);
                Episode::new(vec![StateRef::Features(vec![x])], vec![a], vec![0.0]).unwrap()
            })
            .collect();
        let ds = Dataset::new(eps, 1.0, vec![2]).unwrap();
        let unpenalized = fit_logistic(
            &ds,
            &LogisticOptions {
                ridge: 0.0,
                ..LogisticOptions::default()
            },
        );
        assert!(matches!(unpenalized, Err(FitError::NonConvergence { .. })));
        let penalized = fit_logistic(
            &ds,
            &LogisticOptions {
                ridge: 1e-3,
                ..LogisticOptions::default()
            },
        );
        assert!(penalized.is_ok());
    }

    #[test]
    fn split_fit_is_seeded_and_sized() {
        let ds = feature_dataset(100, false, 3);
        let (_, held_a) = split_fit(&ds, 0.5, 9, |d| {
            fit_logistic(d, &LogisticOptions::default())
        })
        .unwrap();
        let (_, held_b) = split_fit(&ds, 0.5, 9, |d| {
            fit_logistic(d, &LogisticOptions::default())
        })
        .unwrap();
        assert_eq!(held_a.len(), 50);
        assert_eq!(held_a.episodes()[0], held_b.episodes()[0]);
    }

    #[test]
    fn policy_repr_json_round_trip() {
        let ds = discrete_dataset();
        let fit = fit_tabular(
            &ds,
            &TimeBlockSpec::singletons(1, StateBucketer::DiscreteState),
            &FitOptions::default(),
        )
        .unwrap();
        let json = fit.to_json();
        let back = PolicyRepr::from_json(&json).unwrap();
        let a = fit.action_probs(1, &StateRef::Discrete(0)).unwrap();
        let b = back.action_probs(1, &StateRef::Discrete(0)).unwrap();
        assert_eq!(a, b);
    }
}
