//! Two-decision continuous-state trial generator with a confounded second
//! decision.
//!
//! Subjects carry six mean-centered covariates and a baseline utterance
//! count. The first action (BLI = +1 vs AAC = -1) is randomized; at week 12
//! slow responders receive a recourse action (augment with AAC = -1, or
//! intensify = +1) while fast responders continue unchanged (0). The final
//! outcome is
//!
//! ```text
//! Y = η31'X + η22·Y0 + η33·A1 + η34·Y12 − 2θ(1−R)(A1+1)A2 + ε
//! ```
//!
//! with a per-subject effect size θ = θ0 ± σ_θ. Confounding enters through
//! the week-12 decision: clinicians steer the AAC augmentation toward
//! subjects for whom it is more effective, taking A2 = −1 with probability
//! `√Γ*/(1+√Γ*)` when θ = θ0 + σ_θ and `1/(1+√Γ*)` when θ = θ0 − σ_θ, an
//! odds ratio of exactly Γ*. Episodes are two steps: state 1 = (X, Y0),
//! state 2 = (X, A1, slow, A1·slow, Y12), reward only at the end.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{CoreError, Dataset, Episode, Policy, StateRef};
use crate::exec::{self, ExecMode};
use crate::rng::substream;

#[derive(Debug, Error)]
pub enum AutismError {
    #[error("invalid autism config: {0}")]
    Config(String),
    #[error("{0}")]
    Core(#[from] CoreError),
}

/// Which raw value of the outcome equation's `R` marks a slow responder.
/// With `SlowIsZero` (the default) the `(1−R)` factor activates the effect
/// term for exactly the subjects who receive a recourse action.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponderPolarity {
    SlowIsZero,
    SlowIsOne,
}

/// Feature layout of the step-2 state.
pub const F_A1: usize = 6;
pub const F_SLOW: usize = 7;
pub const F_A1_SLOW: usize = 8;
pub const F_Y12: usize = 9;

/// Action encoding: step 1 index 0 = AAC (−1), 1 = BLI (+1); step 2 index
/// 0 = augment with AAC (−1), 1 = continue (0), 2 = intensify (+1).
pub const A1_AAC: usize = 0;
pub const A1_BLI: usize = 1;
pub const A2_AAC: usize = 0;
pub const A2_CONTINUE: usize = 1;
pub const A2_INTENSIFY: usize = 2;

pub fn a1_value(index: usize) -> f64 {
    if index == A1_BLI {
        1.0
    } else {
        -1.0
    }
}

pub fn a2_value(index: usize) -> f64 {
    match index {
        A2_AAC => -1.0,
        A2_CONTINUE => 0.0,
        _ => 1.0,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AutismConfig {
    pub eta31: [f64; 6],
    pub eta22: f64,
    pub eta33: f64,
    pub eta34: f64,
    pub theta0: f64,
    pub sigma_theta: f64,
    pub noise_sd: f64,
    pub n_population: usize,
    pub responder_polarity: ResponderPolarity,
    /// Probability of slow response given the first action.
    pub p_slow_bli: f64,
    pub p_slow_aac: f64,
    /// Covariate population: ages uniform over this range before centering.
    pub age_range: (f64, f64),
    pub p_female: f64,
    /// Race category probabilities (african_american, caucasian, hispanic,
    /// asian); the remainder has all four indicators zero before centering.
    pub race_probs: [f64; 4],
    /// Baseline utterances: exp(Normal(log_mean, log_sd)).
    pub y0_log_mean: f64,
    pub y0_log_sd: f64,
    /// Week-12 utterances: Y0 · exp(b0 + b_a1·A1 − b_slow·slow + Normal(0, log_sd)).
    pub y12_b0: f64,
    pub y12_b_a1: f64,
    pub y12_b_slow: f64,
    pub y12_log_sd: f64,
}

impl Default for AutismConfig {
    fn default() -> Self {
        AutismConfig {
            eta31: [0.4, 1.0, -0.6, 0.5, -0.4, 0.3],
            eta22: 0.5,
            eta33: 0.0,
            eta34: 0.6,
            theta0: 3.0,
            sigma_theta: 5.0,
            noise_sd: 4.0,
            n_population: 300,
            responder_polarity: ResponderPolarity::SlowIsZero,
            p_slow_bli: 0.6,
            p_slow_aac: 0.4,
            age_range: (5.0, 8.0),
            p_female: 0.5,
            race_probs: [0.25, 0.40, 0.20, 0.15],
            y0_log_mean: 3.0,
            y0_log_sd: 0.4,
            y12_b0: 0.10,
            y12_b_a1: 0.15,
            y12_b_slow: 0.30,
            y12_log_sd: 0.30,
        }
    }
}

impl AutismConfig {
    /// The adaptive start-with-BLI policy is worse than always-AAC: a
    /// negative main effect and a negative average recourse effect.
    pub fn case1() -> Self {
        AutismConfig {
            theta0: -2.0,
            eta33: -2.0,
            ..AutismConfig::default()
        }
    }

    /// The adaptive policy is better than always-AAC.
    pub fn case2() -> Self {
        AutismConfig {
            theta0: 3.0,
            eta33: 0.0,
            ..AutismConfig::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "case1" => Some(Self::case1()),
            "case2" => Some(Self::case2()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), AutismError> {
        if self.n_population == 0 {
            return Err(AutismError::Config("empty population".to_string()));
        }
        if !(self.noise_sd > 0.0) {
            return Err(AutismError::Config("noise_sd must be positive".to_string()));
        }
        if self.sigma_theta < 0.0 {
            return Err(AutismError::Config("sigma_theta must be >= 0".to_string()));
        }
        for p in [self.p_slow_bli, self.p_slow_aac, self.p_female] {
            if !(0.0..=1.0).contains(&p) {
                return Err(AutismError::Config("probability outside [0, 1]".to_string()));
            }
        }
        if self.race_probs.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(AutismError::Config("race probabilities exceed 1".to_string()));
        }
        Ok(())
    }

    fn formula_r(&self, slow: bool) -> f64 {
        match self.responder_polarity {
            ResponderPolarity::SlowIsZero => {
                if slow {
                    0.0
                } else {
                    1.0
                }
            }
            ResponderPolarity::SlowIsOne => {
                if slow {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// The outcome equation, verbatim.
    pub fn outcome(
        &self,
        x: &[f64; 6],
        y0: f64,
        a1: f64,
        r: f64,
        y12: f64,
        theta: f64,
        a2: f64,
        noise: f64,
    ) -> f64 {
        let linear: f64 = self.eta31.iter().zip(x).map(|(e, v)| e * v).sum();
        linear + self.eta22 * y0 + self.eta33 * a1 + self.eta34 * y12
            - 2.0 * theta * (1.0 - r) * (a1 + 1.0) * a2
            + noise
    }
}

/// One member of the fixed synthetic population.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationMember {
    pub x: [f64; 6],
    pub y0: f64,
}

/// The fixed pool the generator resamples from; identical across calls with
/// the same seed.
#[derive(Clone, Debug, PartialEq)]
pub struct AutismPopulation {
    pub members: Vec<PopulationMember>,
}

impl AutismPopulation {
    pub fn generate(config: &AutismConfig, seed: u64) -> AutismPopulation {
        let mut rng = substream(seed, "autism-pop", 0);
        let n = config.n_population;
        let mut raw: Vec<[f64; 6]> = Vec::with_capacity(n);
        let mut y0s = Vec::with_capacity(n);
        for _ in 0..n {
            let age = config.age_range.0 + rng.gen::<f64>() * (config.age_range.1 - config.age_range.0);
            let female = f64::from(rng.gen::<f64>() < config.p_female);
            let mut race = [0.0; 4];
            let r: f64 = rng.gen();
            let mut cum = 0.0;
            for (k, &p) in config.race_probs.iter().enumerate() {
                cum += p;
                if r < cum {
                    race[k] = 1.0;
                    break;
                }
            }
            raw.push([age, female, race[0], race[1], race[2], race[3]]);
            let z: f64 = StandardNormal.sample(&mut rng);
            y0s.push((config.y0_log_mean + config.y0_log_sd * z).exp());
        }
        // Mean-center the covariates over the population.
        let mut means = [0.0; 6];
        for x in &raw {
            for (m, v) in means.iter_mut().zip(x) {
                *m += v / n as f64;
            }
        }
        let members = raw
            .into_iter()
            .zip(y0s)
            .map(|(mut x, y0)| {
                for (v, m) in x.iter_mut().zip(&means) {
                    *v -= m;
                }
                PopulationMember { x, y0 }
            })
            .collect();
        AutismPopulation { members }
    }
}

/// Fully drawn subject record.
#[derive(Clone, Debug)]
pub struct AutismSubject {
    pub x: [f64; 6],
    pub y0: f64,
    /// +1 BLI, −1 AAC.
    pub a1: f64,
    pub slow_responder: bool,
    pub y12: f64,
    pub theta: f64,
    /// −1 augment with AAC, 0 continue, +1 intensify.
    pub a2: f64,
    pub y: f64,
    /// Behavior probability of the taken A2, marginal over θ.
    pub p_a2_marginal: f64,
    /// Behavior probability of the taken A2 given θ.
    pub p_a2_conditional: f64,
}

/// Draws response status, week-12 utterances, effect size, the (possibly
/// confounded) second action, and the outcome for one subject under the
/// behavior policy.
fn draw_subject(
    config: &AutismConfig,
    pop: &AutismPopulation,
    gamma_star: f64,
    rng: &mut ChaCha12Rng,
) -> AutismSubject {
    let member = &pop.members[rng.gen_range(0..pop.members.len())];
    let a1 = if rng.gen::<f64>() < 0.5 { 1.0 } else { -1.0 };
    let p_slow = if a1 > 0.0 {
        config.p_slow_bli
    } else {
        config.p_slow_aac
    };
    let slow = rng.gen::<f64>() < p_slow;
    let z12: f64 = StandardNormal.sample(rng);
    let y12 = member.y0
        * (config.y12_b0 + config.y12_b_a1 * a1
            - config.y12_b_slow * f64::from(slow)
            + config.y12_log_sd * z12)
            .exp();
    let theta_high = rng.gen::<f64>() < 0.5;
    let theta = if theta_high {
        config.theta0 + config.sigma_theta
    } else {
        config.theta0 - config.sigma_theta
    };
    let s = gamma_star.sqrt();
    // Slow responders: the AAC augmentation is steered toward high-θ
    // subjects with odds ratio exactly gamma_star.
    let (a2, p_marg, p_cond) = if slow {
        let p_aac_given_theta = if theta_high {
            s / (1.0 + s)
        } else {
            1.0 / (1.0 + s)
        };
        let take_aac = rng.gen::<f64>() < p_aac_given_theta;
        let a2 = if take_aac { -1.0 } else { 1.0 };
        let p_cond = if take_aac {
            p_aac_given_theta
        } else {
            1.0 - p_aac_given_theta
        };
        // Marginally over θ both recourse actions are equally likely.
        (a2, 0.5, p_cond)
    } else {
        (0.0, 1.0, 1.0)
    };
    let noise: f64 = StandardNormal.sample(rng);
    let r = config.formula_r(slow);
    let y = config.outcome(
        &member.x,
        member.y0,
        a1,
        r,
        y12,
        theta,
        a2,
        config.noise_sd * noise,
    );
    AutismSubject {
        x: member.x,
        y0: member.y0,
        a1,
        slow_responder: slow,
        y12,
        theta,
        a2,
        y,
        p_a2_marginal: p_marg,
        p_a2_conditional: p_cond,
    }
}

fn subject_to_episode(subject: &AutismSubject) -> Episode {
    let mut s1 = Vec::with_capacity(7);
    s1.extend_from_slice(&subject.x);
    s1.push(subject.y0);
    let slow = f64::from(subject.slow_responder);
    let mut s2 = Vec::with_capacity(10);
    s2.extend_from_slice(&subject.x);
    s2.push(subject.a1);
    s2.push(slow);
    s2.push(subject.a1 * slow);
    s2.push(subject.y12);
    let a1_idx = if subject.a1 > 0.0 { A1_BLI } else { A1_AAC };
    let a2_idx = if subject.a2 < 0.0 {
        A2_AAC
    } else if subject.a2 == 0.0 {
        A2_CONTINUE
    } else {
        A2_INTENSIFY
    };
    let mut ep = Episode::new(
        vec![StateRef::Features(s1), StateRef::Features(s2)],
        vec![a1_idx, a2_idx],
        vec![0.0, subject.y],
    )
    .expect("autism episode");
    ep.behavior_probs_marginal = Some(vec![0.5, subject.p_a2_marginal]);
    ep.behavior_probs_conditional = Some(vec![0.5, subject.p_a2_conditional]);
    ep
}

/// Generates `n` subjects resampled with replacement from the seed's fixed
/// population. Episode `i` depends only on `(seed, i)`, so datasets of
/// different sizes agree episode-wise.
pub fn generate_autism(
    config: &AutismConfig,
    gamma_star: f64,
    n: usize,
    seed: u64,
    exec_mode: ExecMode,
) -> Result<Dataset, AutismError> {
    config.validate()?;
    if !(gamma_star >= 1.0) {
        return Err(AutismError::Config(format!(
            "gamma_star {gamma_star} must be >= 1"
        )));
    }
    let pop = AutismPopulation::generate(config, seed);
    let episodes: Vec<Episode> = exec::map_range(exec_mode, n, |i| {
        let mut rng = substream(seed, "autism-ep", i as u64);
        subject_to_episode(&draw_subject(config, &pop, gamma_star, &mut rng))
    });
    Ok(Dataset::new(episodes, 1.0, vec![2, 3])?)
}

/// The two evaluation policies: start BLI and augment slow responders with
/// AAC, or use AAC throughout. Both continue fast responders unchanged.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutismEvalPolicy {
    AdaptiveBliAac,
    NonadaptiveAac,
}

impl Policy for AutismEvalPolicy {
    fn action_probs(&self, t: usize, state: &StateRef) -> Result<Vec<f64>, CoreError> {
        match t {
            1 => {
                let mut row = vec![0.0; 2];
                match self {
                    AutismEvalPolicy::AdaptiveBliAac => row[A1_BLI] = 1.0,
                    AutismEvalPolicy::NonadaptiveAac => row[A1_AAC] = 1.0,
                }
                Ok(row)
            }
            2 => {
                let slow = state.features()?[F_SLOW] > 0.5;
                let mut row = vec![0.0; 3];
                if slow {
                    row[A2_AAC] = 1.0;
                } else {
                    row[A2_CONTINUE] = 1.0;
                }
                Ok(row)
            }
            _ => Err(CoreError::StepOutOfRange { t, horizon: 2 }),
        }
    }
}

/// Monte Carlo ground-truth value of an evaluation policy under the seed's
/// population, with its standard error. Evaluation policies never see θ, so
/// θ is drawn fresh and the recourse action comes from the policy.
pub fn true_policy_value(
    config: &AutismConfig,
    policy: AutismEvalPolicy,
    n_mc: usize,
    seed: u64,
) -> Result<(f64, f64), AutismError> {
    config.validate()?;
    let pop = AutismPopulation::generate(config, seed);
    let values = exec::map_range(ExecMode::Auto, n_mc, |i| {
        let mut rng = substream(seed, "autism-truth", i as u64);
        let member = &pop.members[rng.gen_range(0..pop.members.len())];
        let a1 = match policy {
            AutismEvalPolicy::AdaptiveBliAac => 1.0,
            AutismEvalPolicy::NonadaptiveAac => -1.0,
        };
        let p_slow = if a1 > 0.0 {
            config.p_slow_bli
        } else {
            config.p_slow_aac
        };
        let slow = rng.gen::<f64>() < p_slow;
        let z12: f64 = StandardNormal.sample(&mut rng);
        let y12 = member.y0
            * (config.y12_b0 + config.y12_b_a1 * a1
                - config.y12_b_slow * f64::from(slow)
                + config.y12_log_sd * z12)
                .exp();
        let theta = if rng.gen::<f64>() < 0.5 {
            config.theta0 + config.sigma_theta
        } else {
            config.theta0 - config.sigma_theta
        };
        let a2 = if slow { -1.0 } else { 0.0 };
        let noise: f64 = StandardNormal.sample(&mut rng);
        config.outcome(
            &member.x,
            member.y0,
            a1,
            config.formula_r(slow),
            y12,
            theta,
            a2,
            config.noise_sd * noise,
        )
    });
    let mean = exec::pairwise_mean(&values);
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (n_mc as f64 - 1.0).max(1.0);
    Ok((mean, (var / n_mc as f64).sqrt()))
}
