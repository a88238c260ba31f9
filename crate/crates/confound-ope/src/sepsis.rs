//! ICU-style tabular data generator with a confounded first decision.
//!
//! The state tracks four vitals (heart rate, blood pressure, oxygen,
//! glucose), a diabetes flag, and three treatment bits (antibiotics,
//! vasopressors, ventilation): 3·3·2·5·2·8 = 1440 states plus two absorbing
//! terminals. A patient whose vitals are all normal with no active treatment
//! is discharged (+1); a patient with three or more abnormal vitals dies
//! (−1). Horizon 5, discount 0.99.
//!
//! Confounding couples the first antibiotics decision to the patient's luck:
//! every transition is sampled by inverse transform from a pre-drawn uniform
//! `U_t`, with successor states ordered by optimal value, so the sum
//! `U = Σ U_t` is a surrogate for how well the episode will go. The behavior
//! policy follows the "with antibiotics" first-step policy with probability
//! `√Γ*/(1+√Γ*)` when `U` is above its median and `1/(1+√Γ*)` otherwise,
//! which attains the posited odds-ratio level `Γ*` exactly. From the second
//! step on it mixes the soft-optimal policy (85%) with a vasopressor-flipped
//! variant (15%), independent of `U`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{CoreError, Dataset, Episode, StateRef};
use crate::exec::{self, ExecMode};
use crate::rng::substream;
use crate::tabular_mdp::{
    exact_policy_value, mix_policies, policy_iteration, value_iteration, MdpError, Successor,
    TabularMdp, TabularPolicy,
};

pub const N_VITAL_STATES: usize = 1440;
pub const DEATH_STATE: usize = 1440;
pub const DISCHARGE_STATE: usize = 1441;
pub const N_STATES: usize = 1442;
pub const N_ACTIONS: usize = 8;

const ABX_BIT: usize = 4;
const VASO_BIT: usize = 2;
const VENT_BIT: usize = 1;

#[derive(Debug, Error)]
pub enum SepsisError {
    #[error("invalid sepsis config: {0}")]
    Config(String),
    #[error("{0}")]
    Mdp(#[from] MdpError),
    #[error("{0}")]
    Core(#[from] CoreError),
}

/// Non-terminal patient state.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SepsisState {
    /// 0 low, 1 normal, 2 high.
    pub heart_rate: u8,
    /// 0 low, 1 normal, 2 high.
    pub blood_pressure: u8,
    /// 0 low, 1 normal.
    pub oxygen: u8,
    /// 0 very low, 1 low, 2 normal, 3 high, 4 very high.
    pub glucose: u8,
    pub diabetic: bool,
    pub antibiotics_on: bool,
    pub vasopressors_on: bool,
    pub ventilation_on: bool,
}

impl SepsisState {
    pub fn index(&self) -> usize {
        let treat = (self.antibiotics_on as usize) * ABX_BIT
            + (self.vasopressors_on as usize) * VASO_BIT
            + (self.ventilation_on as usize) * VENT_BIT;
        ((((self.heart_rate as usize * 3 + self.blood_pressure as usize) * 2
            + self.oxygen as usize)
            * 5
            + self.glucose as usize)
            * 2
            + self.diabetic as usize)
            * 8
            + treat
    }

    pub fn from_index(mut idx: usize) -> SepsisState {
        let treat = idx % 8;
        idx /= 8;
        let diabetic = idx % 2 == 1;
        idx /= 2;
        let glucose = (idx % 5) as u8;
        idx /= 5;
        let oxygen = (idx % 2) as u8;
        idx /= 2;
        let blood_pressure = (idx % 3) as u8;
        idx /= 3;
        let heart_rate = (idx % 3) as u8;
        SepsisState {
            heart_rate,
            blood_pressure,
            oxygen,
            glucose,
            diabetic,
            antibiotics_on: treat & ABX_BIT != 0,
            vasopressors_on: treat & VASO_BIT != 0,
            ventilation_on: treat & VENT_BIT != 0,
        }
    }

    pub fn abnormal_vitals(&self) -> usize {
        usize::from(self.heart_rate != 1)
            + usize::from(self.blood_pressure != 1)
            + usize::from(self.oxygen != 1)
            + usize::from(self.glucose != 2)
    }

    pub fn any_treatment(&self) -> bool {
        self.antibiotics_on || self.vasopressors_on || self.ventilation_on
    }

    /// All vitals normal, nothing running: the patient leaves next step.
    pub fn is_discharge_condition(&self) -> bool {
        self.abnormal_vitals() == 0 && !self.any_treatment()
    }

    /// Three or more vitals out of range: the patient dies next step.
    pub fn is_death_condition(&self) -> bool {
        self.abnormal_vitals() >= 3
    }
}

/// Three binary treatments packed into an action index 0..8.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SepsisAction {
    pub antibiotics: bool,
    pub vasopressors: bool,
    pub ventilation: bool,
}

impl SepsisAction {
    pub fn index(&self) -> usize {
        (self.antibiotics as usize) * ABX_BIT
            + (self.vasopressors as usize) * VASO_BIT
            + (self.ventilation as usize) * VENT_BIT
    }

    pub fn from_index(idx: usize) -> SepsisAction {
        SepsisAction {
            antibiotics: idx & ABX_BIT != 0,
            vasopressors: idx & VASO_BIT != 0,
            ventilation: idx & VENT_BIT != 0,
        }
    }
}

/// Flips the vasopressor bit of an action index.
pub fn flip_vasopressor(action: usize) -> usize {
    action ^ VASO_BIT
}

/// Initial patient presentation (treatments always off at admission).
#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
pub struct AdmissionState {
    pub heart_rate: u8,
    pub blood_pressure: u8,
    pub oxygen: u8,
    pub glucose: u8,
    pub diabetic: bool,
}

impl AdmissionState {
    fn to_state(self) -> SepsisState {
        SepsisState {
            heart_rate: self.heart_rate,
            blood_pressure: self.blood_pressure,
            oxygen: self.oxygen,
            glucose: self.glucose,
            diabetic: self.diabetic,
            antibiotics_on: false,
            vasopressors_on: false,
            ventilation_on: false,
        }
    }
}

/// Transition-model constants. All probabilities; validated to [0, 1].
///
/// Untreated vitals drift one level up or down with probability `fluct`
/// each. Active treatments hold their vital and repair it with the listed
/// probability; withdrawing a treatment risks a relapse. Glucose only
/// drifts, five times faster for diabetics.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SepsisDynamicsConfig {
    pub fluct: f64,
    pub glucose_fluct: f64,
    pub glucose_diabetic_mult: f64,
    pub abx_heals_hr: f64,
    pub abx_heals_bp: f64,
    pub abx_withdraw_hr: f64,
    pub abx_withdraw_bp: f64,
    pub vent_heals_o2: f64,
    pub vent_withdraw_o2: f64,
    pub vaso_raises_bp_low: f64,
    pub vaso_raises_bp_normal: f64,
    pub vaso_withdraw_bp: f64,
    pub death_reward: f64,
    pub discharge_reward: f64,
    pub horizon: usize,
    pub discount: f64,
    /// Exploration mass of the soft-optimal policy.
    pub soften_eps: f64,
    /// Weight on the soft-optimal policy in the later-step behavior mixture.
    pub behavior_optimal_mix: f64,
    pub admissions: Vec<AdmissionState>,
}

impl Default for SepsisDynamicsConfig {
    fn default() -> Self {
        SepsisDynamicsConfig {
            fluct: 0.1,
            glucose_fluct: 0.06,
            glucose_diabetic_mult: 5.0,
            abx_heals_hr: 0.6,
            abx_heals_bp: 0.6,
            abx_withdraw_hr: 0.2,
            abx_withdraw_bp: 0.2,
            vent_heals_o2: 0.55,
            vent_withdraw_o2: 0.2,
            vaso_raises_bp_low: 0.55,
            vaso_raises_bp_normal: 0.55,
            vaso_withdraw_bp: 0.2,
            death_reward: -1.0,
            discharge_reward: 1.0,
            horizon: 5,
            discount: 0.99,
            soften_eps: 0.05,
            behavior_optimal_mix: 0.85,
            admissions: vec![
                // Moderately sick presentations, two vitals off at most.
                AdmissionState {
                    heart_rate: 2,
                    blood_pressure: 1,
                    oxygen: 0,
                    glucose: 2,
                    diabetic: false,
                },
                AdmissionState {
                    heart_rate: 1,
                    blood_pressure: 0,
                    oxygen: 1,
                    glucose: 3,
                    diabetic: false,
                },
                AdmissionState {
                    heart_rate: 2,
                    blood_pressure: 2,
                    oxygen: 1,
                    glucose: 2,
                    diabetic: false,
                },
                AdmissionState {
                    heart_rate: 1,
                    blood_pressure: 0,
                    oxygen: 1,
                    glucose: 4,
                    diabetic: true,
                },
            ],
        }
    }
}

impl SepsisDynamicsConfig {
    pub fn validate(&self) -> Result<(), SepsisError> {
        let probs = [
            self.fluct,
            self.glucose_fluct,
            self.abx_heals_hr,
            self.abx_heals_bp,
            self.abx_withdraw_hr,
            self.abx_withdraw_bp,
            self.vent_heals_o2,
            self.vent_withdraw_o2,
            self.vaso_raises_bp_low,
            self.vaso_raises_bp_normal,
            self.vaso_withdraw_bp,
            self.soften_eps,
            self.behavior_optimal_mix,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(SepsisError::Config(
                "all dynamics probabilities must lie in [0, 1]".to_string(),
            ));
        }
        if 2.0 * self.fluct > 1.0 {
            return Err(SepsisError::Config("fluct too large".to_string()));
        }
        let g = self.glucose_fluct * self.glucose_diabetic_mult;
        if 2.0 * g > 1.0 {
            return Err(SepsisError::Config(
                "diabetic glucose fluctuation exceeds 1".to_string(),
            ));
        }
        if self.horizon == 0 || self.horizon > 12 {
            return Err(SepsisError::Config(
                "horizon must be in 1..=12".to_string(),
            ));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(SepsisError::Config(
                "discount must be in (0, 1) for planning".to_string(),
            ));
        }
        if self.admissions.is_empty() {
            return Err(SepsisError::Config("no admission states".to_string()));
        }
        for adm in &self.admissions {
            let s = adm.to_state();
            if adm.heart_rate > 2 || adm.blood_pressure > 2 || adm.oxygen > 1 || adm.glucose > 4 {
                return Err(SepsisError::Config("admission level out of range".to_string()));
            }
            if s.is_death_condition() || s.is_discharge_condition() {
                return Err(SepsisError::Config(
                    "admission state must not be terminal-bound".to_string(),
                ));
            }
        }
        Ok(())
    }
}

/// Distribution over levels of one vital: list of (level, prob), levels
/// distinct.
fn fluctuate(level: u8, n_levels: u8, p: f64) -> Vec<(u8, f64)> {
    let mut out = Vec::with_capacity(3);
    let mut stay = 1.0;
    if level > 0 {
        out.push((level - 1, p));
        stay -= p;
    }
    if level + 1 < n_levels {
        out.push((level + 1, p));
        stay -= p;
    }
    out.push((level, stay));
    out
}

fn two_point(level: u8, moved: u8, p: f64) -> Vec<(u8, f64)> {
    if p == 0.0 {
        vec![(level, 1.0)]
    } else if p == 1.0 {
        vec![(moved, 1.0)]
    } else {
        vec![(moved, p), (level, 1.0 - p)]
    }
}

fn hr_dist(cfg: &SepsisDynamicsConfig, s: &SepsisState, a: SepsisAction) -> Vec<(u8, f64)> {
    if a.antibiotics {
        if s.heart_rate == 2 {
            two_point(2, 1, cfg.abx_heals_hr)
        } else {
            vec![(s.heart_rate, 1.0)]
        }
    } else if s.antibiotics_on && s.heart_rate == 1 {
        two_point(1, 2, cfg.abx_withdraw_hr)
    } else {
        fluctuate(s.heart_rate, 3, cfg.fluct)
    }
}

fn bp_dist(cfg: &SepsisDynamicsConfig, s: &SepsisState, a: SepsisAction) -> Vec<(u8, f64)> {
    if a.antibiotics && s.blood_pressure == 2 {
        two_point(2, 1, cfg.abx_heals_bp)
    } else if a.vasopressors {
        match s.blood_pressure {
            0 => two_point(0, 1, cfg.vaso_raises_bp_low),
            1 => two_point(1, 2, cfg.vaso_raises_bp_normal),
            _ => vec![(2, 1.0)],
        }
    } else if s.vasopressors_on {
        match s.blood_pressure {
            0 => vec![(0, 1.0)],
            level => two_point(level, level - 1, cfg.vaso_withdraw_bp),
        }
    } else if a.antibiotics {
        vec![(s.blood_pressure, 1.0)]
    } else if s.antibiotics_on && s.blood_pressure == 1 {
        two_point(1, 2, cfg.abx_withdraw_bp)
    } else {
        fluctuate(s.blood_pressure, 3, cfg.fluct)
    }
}

fn o2_dist(cfg: &SepsisDynamicsConfig, s: &SepsisState, a: SepsisAction) -> Vec<(u8, f64)> {
    if a.ventilation {
        if s.oxygen == 0 {
            two_point(0, 1, cfg.vent_heals_o2)
        } else {
            vec![(1, 1.0)]
        }
    } else if s.ventilation_on && s.oxygen == 1 {
        two_point(1, 0, cfg.vent_withdraw_o2)
    } else {
        fluctuate(s.oxygen, 2, cfg.fluct)
    }
}

fn glucose_dist(cfg: &SepsisDynamicsConfig, s: &SepsisState) -> Vec<(u8, f64)> {
    let p = if s.diabetic {
        cfg.glucose_fluct * cfg.glucose_diabetic_mult
    } else {
        cfg.glucose_fluct
    };
    fluctuate(s.glucose, 5, p)
}

/// Builds the full MDP: 1440 patient states plus death and discharge
/// terminals. Patients in a discharge-condition state move to discharge with
/// probability 1 (reward `discharge_reward`) whatever the action; patients
/// in a death-condition state move to death (reward `death_reward`).
pub fn build_sepsis_mdp(cfg: &SepsisDynamicsConfig) -> Result<TabularMdp, SepsisError> {
    cfg.validate()?;
    let mut transitions: Vec<Vec<Vec<Successor>>> = Vec::with_capacity(N_STATES);
    for idx in 0..N_VITAL_STATES {
        let s = SepsisState::from_index(idx);
        let row_for = |a_idx: usize| -> Vec<Successor> {
            if s.is_discharge_condition() {
                return vec![Successor {
                    state: DISCHARGE_STATE,
                    prob: 1.0,
                    reward: cfg.discharge_reward,
                }];
            }
            if s.is_death_condition() {
                return vec![Successor {
                    state: DEATH_STATE,
                    prob: 1.0,
                    reward: cfg.death_reward,
                }];
            }
            let a = SepsisAction::from_index(a_idx);
            let mut row = Vec::new();
            for &(hr, p_hr) in &hr_dist(cfg, &s, a) {
                for &(bp, p_bp) in &bp_dist(cfg, &s, a) {
                    for &(o2, p_o2) in &o2_dist(cfg, &s, a) {
                        for &(glu, p_glu) in &glucose_dist(cfg, &s) {
                            let p = p_hr * p_bp * p_o2 * p_glu;
                            if p == 0.0 {
                                continue;
                            }
                            let next = SepsisState {
                                heart_rate: hr,
                                blood_pressure: bp,
                                oxygen: o2,
                                glucose: glu,
                                diabetic: s.diabetic,
                                antibiotics_on: a.antibiotics,
                                vasopressors_on: a.vasopressors,
                                ventilation_on: a.ventilation,
                            };
                            row.push(Successor {
                                state: next.index(),
                                prob: p,
                                reward: 0.0,
                            });
                        }
                    }
                }
            }
            row
        };
        transitions.push((0..N_ACTIONS).map(row_for).collect());
    }
    for terminal in [DEATH_STATE, DISCHARGE_STATE] {
        transitions.push(
            (0..N_ACTIONS)
                .map(|_| {
                    vec![Successor {
                        state: terminal,
                        prob: 1.0,
                        reward: 0.0,
                    }]
                })
                .collect(),
        );
    }
    let mut initial = vec![0.0; N_STATES];
    let weight = 1.0 / cfg.admissions.len() as f64;
    for adm in &cfg.admissions {
        initial[adm.to_state().index()] += weight;
    }
    let mut absorbing = vec![false; N_STATES];
    absorbing[DEATH_STATE] = true;
    absorbing[DISCHARGE_STATE] = true;
    Ok(TabularMdp::new(
        transitions,
        initial,
        absorbing,
        cfg.horizon,
        cfg.discount,
    )?)
}

/// First-step policies that move all probability mass across the
/// antibiotics bit of the soft-optimal policy: "with antibiotics" collects
/// each off/on pair onto the on-action, "without antibiotics" onto the
/// off-action. Both follow the soft-optimal policy from step 2 on.
pub fn derive_w_wo(
    soft_optimal: &TabularPolicy,
    n_states: usize,
) -> Result<(TabularPolicy, TabularPolicy), SepsisError> {
    let mut w_rows = Vec::with_capacity(n_states);
    let mut wo_rows = Vec::with_capacity(n_states);
    let mut soft_rows = Vec::with_capacity(n_states);
    for s in 0..n_states {
        let row = soft_optimal.probs(1, s);
        let mut w = vec![0.0; N_ACTIONS];
        let mut wo = vec![0.0; N_ACTIONS];
        for a in 0..N_ACTIONS {
            if a & ABX_BIT != 0 {
                w[a] = row[a] + row[a & !ABX_BIT];
            } else {
                wo[a] = row[a] + row[a | ABX_BIT];
            }
        }
        w_rows.push(w);
        wo_rows.push(wo);
        soft_rows.push(row.to_vec());
    }
    let w = TabularPolicy::time_indexed(vec![w_rows, soft_rows.clone()])?;
    let wo = TabularPolicy::time_indexed(vec![wo_rows, soft_rows])?;
    Ok((w, wo))
}

/// Irwin-Hall CDF: distribution of a sum of `t` iid uniforms.
pub fn irwin_hall_cdf(t: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= t as f64 {
        return 1.0;
    }
    let mut factorial = 1.0;
    for k in 1..=t {
        factorial *= k as f64;
    }
    let mut sum = 0.0;
    let mut binom = 1.0;
    for k in 0..=(x.floor() as usize) {
        let term = binom * (x - k as f64).powi(t as i32);
        sum += if k % 2 == 0 { term } else { -term };
        binom = binom * (t - k) as f64 / (k + 1) as f64;
    }
    sum / factorial
}

/// The pre-drawn uniforms that drive one episode's transitions, and their
/// sum, the latent health surrogate.
#[derive(Clone, Debug)]
pub struct ConfounderDraw {
    pub u: Vec<f64>,
    pub u_sum: f64,
}

impl ConfounderDraw {
    pub fn draw<R: Rng>(rng: &mut R, horizon: usize) -> ConfounderDraw {
        let u: Vec<f64> = (0..horizon).map(|_| rng.gen::<f64>()).collect();
        let u_sum = u.iter().sum();
        ConfounderDraw { u, u_sum }
    }
}

/// Branch probabilities of following the with-antibiotics policy at the
/// first step: (healthy branch, unhealthy branch). Their odds ratio is
/// exactly `gamma_star`.
pub fn confounding_branch_probs(gamma_star: f64) -> (f64, f64) {
    let s = gamma_star.sqrt();
    (s / (1.0 + s), 1.0 / (1.0 + s))
}

#[derive(Clone, Copy)]
struct SortedSuccessor {
    cum: f64,
    state: usize,
    reward: f64,
}

/// Everything derived from one dynamics config: MDP, planner outputs, the
/// evaluation policies, the later-step behavior mixture, the inverse
/// transform tables, and the confounder threshold.
pub struct SepsisWorld {
    pub config: SepsisDynamicsConfig,
    pub mdp: TabularMdp,
    pub optimal: TabularPolicy,
    pub soft_optimal: TabularPolicy,
    pub optimal_values: Vec<f64>,
    pub w_policy: TabularPolicy,
    pub wo_policy: TabularPolicy,
    pub behavior_tail: TabularPolicy,
    /// Confounder threshold: empirical median of `Σ U_t` over 10k draws from
    /// a fixed calibration stream.
    pub u0: f64,
    /// `P(U > u0)` under the Irwin-Hall law; the marginal weight of the
    /// healthy branch.
    pub healthy_weight: f64,
    sorted: Vec<Vec<Vec<SortedSuccessor>>>,
}

const U0_CALIBRATION_SEED: u64 = 0x5e9515;
const U0_CALIBRATION_DRAWS: usize = 10_000;

impl SepsisWorld {
    pub fn build(config: SepsisDynamicsConfig) -> Result<SepsisWorld, SepsisError> {
        config.validate()?;
        let mdp = build_sepsis_mdp(&config)?;
        Self::build_from_mdp(config, mdp)
    }

    /// Builds the planner outputs and policies on a caller-supplied MDP,
    /// e.g. one with transition rows re-estimated from samples.
    pub fn build_from_mdp(
        config: SepsisDynamicsConfig,
        mdp: TabularMdp,
    ) -> Result<SepsisWorld, SepsisError> {
        config.validate()?;
        let optimal = policy_iteration(&mdp)?;
        let (optimal_values, _) = value_iteration(&mdp)?;
        let mut soft_optimal = optimal.soften(config.soften_eps)?;
        let noop = |n: usize| {
            let mut row = vec![0.0; n];
            row[0] = 1.0;
            row
        };
        // Terminal states take the no-op action under every policy so padded
        // steps carry unit importance weight.
        for s in [DEATH_STATE, DISCHARGE_STATE] {
            soft_optimal.set_row_all_steps(s, noop(N_ACTIONS));
        }
        let (mut w_policy, mut wo_policy) = derive_w_wo(&soft_optimal, N_STATES)?;
        let flipped_rows: Vec<Vec<f64>> = (0..N_STATES)
            .map(|s| {
                let row = soft_optimal.probs(2, s);
                (0..N_ACTIONS).map(|a| row[flip_vasopressor(a)]).collect()
            })
            .collect();
        let flipped = TabularPolicy::stationary(flipped_rows)?;
        let soft_stationary = TabularPolicy::stationary(
            (0..N_STATES)
                .map(|s| soft_optimal.probs(2, s).to_vec())
                .collect(),
        )?;
        let mut behavior_tail =
            mix_policies(&soft_stationary, &flipped, config.behavior_optimal_mix)?;
        for s in [DEATH_STATE, DISCHARGE_STATE] {
            w_policy.set_row_all_steps(s, noop(N_ACTIONS));
            wo_policy.set_row_all_steps(s, noop(N_ACTIONS));
            behavior_tail.set_row_all_steps(s, noop(N_ACTIONS));
        }

        // Inverse-transform tables: successors sorted by (optimal value,
        // immediate reward, state index) so large uniforms mean good luck.
        let sorted = (0..N_STATES)
            .map(|s| {
                (0..N_ACTIONS)
                    .map(|a| {
                        let mut row: Vec<&Successor> = mdp.successors(s, a).iter().collect();
                        row.sort_by(|x, y| {
                            optimal_values[x.state]
                                .total_cmp(&optimal_values[y.state])
                                .then(x.reward.total_cmp(&y.reward))
                                .then(x.state.cmp(&y.state))
                        });
                        let mut cum = 0.0;
                        let mut out: Vec<SortedSuccessor> = row
                            .into_iter()
                            .map(|succ| {
                                cum += succ.prob;
                                SortedSuccessor {
                                    cum,
                                    state: succ.state,
                                    reward: succ.reward,
                                }
                            })
                            .collect();
                        if let Some(last) = out.last_mut() {
                            last.cum = 1.0;
                        }
                        out
                    })
                    .collect()
            })
            .collect();

        let mut sums: Vec<f64> = (0..U0_CALIBRATION_DRAWS)
            .map(|i| {
                let mut rng = substream(U0_CALIBRATION_SEED, "u0-calibration", i as u64);
                ConfounderDraw::draw(&mut rng, config.horizon).u_sum
            })
            .collect();
        sums.sort_by(f64::total_cmp);
        let u0 = 0.5 * (sums[U0_CALIBRATION_DRAWS / 2 - 1] + sums[U0_CALIBRATION_DRAWS / 2]);
        let healthy_weight = 1.0 - irwin_hall_cdf(config.horizon, u0);

        Ok(SepsisWorld {
            config,
            mdp,
            optimal,
            soft_optimal,
            optimal_values,
            w_policy,
            wo_policy,
            behavior_tail,
            u0,
            healthy_weight,
            sorted,
        })
    }

    fn step(&self, s: usize, a: usize, u: f64) -> (usize, f64) {
        let row = &self.sorted[s][a];
        // First successor whose cumulative probability exceeds u.
        let mut lo = 0;
        let mut hi = row.len() - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if row[mid].cum > u {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        (row[lo].state, row[lo].reward)
    }

    /// Marginal probability (over the confounder) of following the
    /// with-antibiotics branch at the first step.
    pub fn marginal_w_branch(&self, gamma_star: f64) -> f64 {
        let (healthy, unhealthy) = confounding_branch_probs(gamma_star);
        self.healthy_weight * healthy + (1.0 - self.healthy_weight) * unhealthy
    }

    /// True marginalized behavior policy at the first step.
    pub fn marginal_first_step_row(&self, gamma_star: f64, state: usize) -> Vec<f64> {
        let pw = self.marginal_w_branch(gamma_star);
        let w = self.w_policy.probs(1, state);
        let wo = self.wo_policy.probs(1, state);
        (0..N_ACTIONS)
            .map(|a| pw * w[a] + (1.0 - pw) * wo[a])
            .collect()
    }

    /// Exact values of the three evaluation policies plus the soft-optimal
    /// reference.
    pub fn oracle_values(&self) -> Result<SepsisOracle, SepsisError> {
        Ok(SepsisOracle {
            wo: exact_policy_value(&self.mdp, &self.wo_policy)?,
            w: exact_policy_value(&self.mdp, &self.w_policy)?,
            optimal: exact_policy_value(&self.mdp, &self.optimal)?,
            soft_optimal: exact_policy_value(&self.mdp, &self.soft_optimal)?,
            u0: self.u0,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SepsisOracle {
    pub wo: f64,
    pub w: f64,
    pub optimal: f64,
    pub soft_optimal: f64,
    pub u0: f64,
}

/// Generates `n` confounded episodes. Episode `i` depends only on
/// `(seed, i)`, so datasets are reproducible across thread counts and
/// episode-wise consistent across sizes.
pub fn simulate_confounded(
    world: &SepsisWorld,
    gamma_star: f64,
    n: usize,
    seed: u64,
    exec_mode: ExecMode,
) -> Result<Dataset, SepsisError> {
    if !(gamma_star >= 1.0) {
        return Err(SepsisError::Config(format!(
            "gamma_star {gamma_star} must be >= 1"
        )));
    }
    let horizon = world.config.horizon;
    let (healthy_prob, unhealthy_prob) = confounding_branch_probs(gamma_star);
    let initial = world.mdp.initial();
    let init_cum: Vec<(usize, f64)> = {
        let mut cum = 0.0;
        initial
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(s, &p)| {
                cum += p;
                (s, cum)
            })
            .collect()
    };
    let episodes: Vec<Episode> = exec::map_range(exec_mode, n, |i| {
        let mut rng = substream(seed, "sepsis-ep", i as u64);
        let draw = ConfounderDraw::draw(&mut rng, horizon);
        let r: f64 = rng.gen();
        let mut s = init_cum
            .iter()
            .find(|&&(_, c)| r < c)
            .map(|&(s, _)| s)
            .unwrap_or(init_cum.last().expect("nonempty initial").0);

        let healthy = draw.u_sum > world.u0;
        let p_w_branch = if healthy { healthy_prob } else { unhealthy_prob };
        let follow_w = rng.gen::<f64>() < p_w_branch;
        let pw_marginal = world.marginal_w_branch(gamma_star);

        let mut states = Vec::with_capacity(horizon);
        let mut actions = Vec::with_capacity(horizon);
        let mut rewards = Vec::with_capacity(horizon);
        let mut marginal = Vec::with_capacity(horizon);
        let mut conditional = Vec::with_capacity(horizon);
        for t in 1..=horizon {
            let (a, p_marg, p_cond) = if t == 1 {
                let row = if follow_w {
                    world.w_policy.probs(1, s)
                } else {
                    world.wo_policy.probs(1, s)
                };
                let r: f64 = rng.gen();
                let mut cum = 0.0;
                let mut a = N_ACTIONS - 1;
                for (idx, &p) in row.iter().enumerate() {
                    cum += p;
                    if r < cum {
                        a = idx;
                        break;
                    }
                }
                let w_row = world.w_policy.probs(1, s);
                let wo_row = world.wo_policy.probs(1, s);
                let p_marg = pw_marginal * w_row[a] + (1.0 - pw_marginal) * wo_row[a];
                let p_cond = p_w_branch * w_row[a] + (1.0 - p_w_branch) * wo_row[a];
                (a, p_marg, p_cond)
            } else {
                let row = world.behavior_tail.probs(t, s);
                let r: f64 = rng.gen();
                let mut cum = 0.0;
                let mut a = N_ACTIONS - 1;
                for (idx, &p) in row.iter().enumerate() {
                    cum += p;
                    if r < cum {
                        a = idx;
                        break;
                    }
                }
                (a, row[a], row[a])
            };
            let (next, reward) = world.step(s, a, draw.u[t - 1]);
            states.push(StateRef::Discrete(s));
            actions.push(a);
            rewards.push(reward);
            marginal.push(p_marg);
            conditional.push(p_cond);
            s = next;
        }
        let mut ep = Episode::new(states, actions, rewards).expect("sepsis episode");
        ep.behavior_probs_marginal = Some(marginal);
        ep.behavior_probs_conditional = Some(conditional);
        ep
    });
    Ok(Dataset::new(
        episodes,
        world.config.discount,
        vec![N_ACTIONS; horizon],
    )?)
}
