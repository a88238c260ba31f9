//! Bounding the value of a sequential evaluation policy from confounded
//! off-policy data.
//!
//! The library estimates worst-case lower and upper bounds on the expected
//! discounted return of an evaluation policy when the logged behavior policy
//! may have used an unobserved confounder at one known decision step. The
//! analyst posits an odds-ratio confounding level `Γ ≥ 1`; the estimators
//! stay valid for any confounding mechanism within that level.
//!
//! Modules:
//!
//! - [`core`]: episodes, datasets, returns, importance weights.
//! - [`tabular_mdp`]: enumerated-state MDPs with exact planners, used both as
//!   a simulator substrate and as a ground-truth oracle.
//! - [`sepsis`]: a tabular ICU-style data generator with a confounded first
//!   antibiotics decision.
//! - [`autism`]: a two-decision continuous-state trial generator with a
//!   confounded week-12 recourse decision.
//! - [`behavior`]: behavior-policy estimation (tabular MLE, multinomial
//!   logistic regression, sample splitting).
//! - [`bounds`]: the estimator suite (standard importance sampling, the naive
//!   Γ-rescaled bound, and the loss-minimization bound built from per-action
//!   asymmetric-expectile models).
//! - [`sensitivity`]: Γ sweeps, replication quantiles, design sensitivity.
//! - [`experiment`]: end-to-end scenario runners and file outputs backing the
//!   CLI.
//!
//! Data-parallel loops (episode generation, bound assembly, replication
//! sweeps) run on rayon when the default `parallel` feature is enabled and
//! fall back to sequential iteration without it. Outputs are byte-identical
//! across thread counts.

pub mod autism;
pub mod behavior;
pub mod bounds;
pub mod core;
pub mod exec;
pub mod experiment;
pub mod rng;
pub mod sensitivity;
pub mod sepsis;
pub mod tabular_mdp;

pub use crate::core::{Dataset, Episode, HistoryKey, Policy, StateRef, WeightVector};
pub use behavior::PolicyRepr;
pub use bounds::{BoundEstimate, ConfoundingSpec, KappaModel};
pub use sensitivity::SensitivityCurve;
pub use tabular_mdp::{TabularMdp, TabularPolicy};
