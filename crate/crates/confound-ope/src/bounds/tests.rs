use super::*;
use crate::core::Episode;
use crate::tabular_mdp::{
    exact_policy_value, random_mdp, random_policy, sample_episodes, TabularPolicy,
};

fn opts() -> EstimatorOptions {
    EstimatorOptions::default()
}

/// Hand-built dataset with unit weights: behavior == evaluation == uniform.
fn unit_weight_dataset(returns: &[f64]) -> (Dataset, TabularPolicy) {
    let episodes: Vec<Episode> = returns
        .iter()
        .map(|&y| Episode::new(vec![StateRef::Discrete(0)], vec![0], vec![y]).unwrap())
        .collect();
    let ds = Dataset::new(episodes, 1.0, vec![2]).unwrap();
    let uniform = TabularPolicy::stationary(vec![vec![0.5, 0.5]]).unwrap();
    (ds, uniform)
}

#[test]
fn is_estimate_with_identical_policies_is_mean_return() {
    let (ds, pol) = unit_weight_dataset(&[1.0, -1.0, 0.5, 0.5]);
    let est = is_estimate(&ds, &pol, &pol, &opts()).unwrap();
    assert!((est - 0.25).abs() < 1e-12);
}

#[test]
fn naive_bound_at_gamma_one_equals_is() {
    let (ds, pol) = unit_weight_dataset(&[1.0, -1.0, 0.5, 0.25]);
    let cspec = ConfoundingSpec::single(1, 1.0);
    let lower = naive_bound(&ds, &pol, &pol, &cspec, Direction::Lower, &opts()).unwrap();
    let est = is_estimate(&ds, &pol, &pol, &opts()).unwrap();
    assert!((lower - est).abs() < 1e-12);
}

#[test]
fn naive_bound_positive_returns_divides_by_gamma() {
    let (ds, pol) = unit_weight_dataset(&[1.0, 3.0, 2.0, 2.0]);
    let cspec = ConfoundingSpec::single(1, 2.0);
    let lower = naive_bound(&ds, &pol, &pol, &cspec, Direction::Lower, &opts()).unwrap();
    assert!((lower - 2.0 / 2.0).abs() < 1e-12);
}

#[test]
fn naive_bound_symmetric_binary_example() {
    // Y in {-1, +1} with equal mass, rho = 1, gamma = 2:
    // lower = 0.5*(-1*2) + 0.5*(1*0.5) = -0.75.
    let (ds, pol) = unit_weight_dataset(&[-1.0, 1.0]);
    let cspec = ConfoundingSpec::single(1, 2.0);
    let lower = naive_bound(&ds, &pol, &pol, &cspec, Direction::Lower, &opts()).unwrap();
    assert!((lower + 0.75).abs() < 1e-12);
    let upper = naive_bound(&ds, &pol, &pol, &cspec, Direction::Upper, &opts()).unwrap();
    assert!((upper - 0.75).abs() < 1e-12);
}

#[test]
fn naive_per_step_form_multiplies_levels() {
    let (ds, pol) = unit_weight_dataset(&[2.0, 2.0]);
    let cspec = ConfoundingSpec {
        t_star: 1,
        gamma: 2.0,
        per_step_gammas: Some(vec![2.0]),
    };
    let lower = naive_bound(&ds, &pol, &pol, &cspec, Direction::Lower, &opts()).unwrap();
    assert!((lower - 1.0).abs() < 1e-12);
}


/// Unsmoothed per-(state, action) frequency fit: makes the gamma = 1
/// reduction exact in sample.
fn fitted_behavior(ds: &Dataset) -> crate::behavior::PolicyRepr {
    crate::behavior::fit_tabular(
        ds,
        &crate::behavior::TimeBlockSpec::singletons(
            ds.horizon(),
            crate::behavior::StateBucketer::DiscreteState,
        ),
        &crate::behavior::FitOptions {
            alpha: 0.0,
            p_min: 0.0,
        },
    )
    .unwrap()
}

/// Evaluation policy that copies another policy before the confounded step,
/// so prefix importance ratios are exactly one.
struct SwitchPolicy<'a> {
    before: &'a dyn crate::core::Policy,
    after: TabularPolicy,
    t_star: usize,
}

impl crate::core::Policy for SwitchPolicy<'_> {
    fn action_probs(&self, t: usize, state: &StateRef) -> Result<Vec<f64>, crate::core::CoreError> {
        if t < self.t_star {
            self.before.action_probs(t, state)
        } else {
            self.after.action_probs(t, state)
        }
    }
}

/// With unsmoothed per-(state, action) frequency fits, the assembled bound
/// at gamma = 1 reduces to the importance-sampling estimate: exactly at
/// t* = 1, and exactly at later t* when the evaluation policy matches the
/// fitted behavior before t* (constant prefix weights per history bucket).
#[test]
fn final_bound_collapses_to_is_at_gamma_one_on_small_mdp() {
    let mdp = random_mdp(3, 2, 3, 0.95, 31);
    let behavior = random_policy(3, 2, 0.15, 32);
    let ds = sample_episodes(&mdp, &behavior, 4000, 7, ExecMode::Auto).unwrap();
    let fitted = crate::behavior::fit_tabular(
        &ds,
        &crate::behavior::TimeBlockSpec::singletons(
            3,
            crate::behavior::StateBucketer::DiscreteState,
        ),
        &crate::behavior::FitOptions {
            alpha: 0.0,
            p_min: 0.0,
        },
    )
    .unwrap();
    for t_star in 1..=3usize {
        let evaluation = SwitchPolicy {
            before: &fitted,
            after: random_policy(3, 2, 0.1, 33),
            t_star,
        };
        let cspec = ConfoundingSpec::single(t_star, 1.0);
        let est = final_bound(
            &ds,
            &fitted,
            &evaluation,
            &cspec,
            KappaSpec::Tabular {
                bucketing: KappaBucketing::State(crate::behavior::StateBucketer::DiscreteState),
            },
            &opts(),
        )
        .unwrap();
        let is = est.point_is;
        let tol = 1e-4 * (1.0 + is.abs());
        assert!(
            (est.lower - is).abs() < tol,
            "t*={t_star}: lower {} vs IS {is}",
            est.lower
        );
        assert!(
            (est.upper - is).abs() < tol,
            "t*={t_star}: upper {} vs IS {is}",
            est.upper
        );
    }
}

#[test]
fn is_estimate_matches_exact_value_on_oracle_mdp() {
    let mdp = random_mdp(4, 2, 3, 0.9, 51);
    let behavior = random_policy(4, 2, 0.2, 52);
    let evaluation = random_policy(4, 2, 0.1, 53);
    let exact = exact_policy_value(&mdp, &evaluation).unwrap();
    let n = 100_000;
    let ds = sample_episodes(&mdp, &behavior, n, 9, ExecMode::Auto).unwrap();
    let est = is_estimate(&ds, &behavior, &evaluation, &opts()).unwrap();
    // Crude SE bound from the weight range.
    let se_cap = 3.0 * 30.0 / (n as f64).sqrt();
    assert!(
        (est - exact).abs() < se_cap,
        "IS {est} vs exact {exact}"
    );
}

#[test]
fn bounds_are_monotone_in_gamma_and_ordered() {
    let mdp = random_mdp(3, 2, 3, 0.95, 61);
    let logging = random_policy(3, 2, 0.15, 62);
    let evaluation = random_policy(3, 2, 0.1, 63);
    let ds = sample_episodes(&mdp, &logging, 3000, 11, ExecMode::Auto).unwrap();
    let behavior = fitted_behavior(&ds);
    let grid: Vec<f64> = (0..9).map(|i| 1.0 + 0.5 * i as f64).collect();
    for t_star in [1, 2] {
        let problem = BoundProblem::new(
            &ds,
            &behavior,
            &evaluation,
            t_star,
            KappaSpec::Tabular {
                bucketing: KappaBucketing::State(crate::behavior::StateBucketer::DiscreteState),
            },
            &opts(),
        )
        .unwrap();
        let estimates = problem.final_bound_sweep(&grid).unwrap();
        for pair in estimates.windows(2) {
            assert!(pair[1].lower <= pair[0].lower + 1e-6);
            assert!(pair[1].upper >= pair[0].upper - 1e-6);
        }
        for est in &estimates {
            assert!(est.lower <= est.upper + 1e-6);
            // The interval brackets the IS point exactly at t* = 1 (the
            // empirical identity); at later steps it holds up to the
            // within-bucket variation of the prefix weights.
            if t_star == 1 {
                assert!(est.lower <= est.point_is + 1e-6);
                assert!(est.upper >= est.point_is - 1e-6);
            }
        }
    }
}

/// The naive bound rescales the whole weighted return by Γ, so it widens
/// much faster than the adjustment-based bound on first-step confounding.
#[test]
fn final_bound_dominates_naive_at_first_step() {
    let mdp = random_mdp(3, 2, 3, 0.95, 61);
    let logging = random_policy(3, 2, 0.15, 62);
    let evaluation = random_policy(3, 2, 0.1, 63);
    let ds = sample_episodes(&mdp, &logging, 3000, 11, ExecMode::Auto).unwrap();
    let behavior = fitted_behavior(&ds);
    let problem = BoundProblem::new(
        &ds,
        &behavior,
        &evaluation,
        1,
        KappaSpec::Tabular {
            bucketing: KappaBucketing::State(crate::behavior::StateBucketer::DiscreteState),
        },
        &opts(),
    )
    .unwrap();
    let grid: Vec<f64> = (0..9).map(|i| 1.0 + 0.5 * i as f64).collect();
    let estimates = problem.final_bound_sweep(&grid).unwrap();
    for (est, &g) in estimates.iter().zip(&grid) {
        let (naive_lower, naive_upper) = problem.naive(&ConfoundingSpec::single(1, g));
        assert!(
            est.lower >= naive_lower - 1e-6,
            "gamma {g}: {} < naive {naive_lower}",
            est.lower
        );
        assert!(
            est.upper <= naive_upper + 1e-6,
            "gamma {g}: {} > naive {naive_upper}",
            est.upper
        );
    }
}

#[test]
fn bounded_rewards_keep_extreme_gamma_finite() {
    // Alternate actions so both adjustment models have samples.
    let episodes: Vec<Episode> = [1.0, -1.0, 0.0, 0.5]
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            Episode::new(vec![StateRef::Discrete(0)], vec![i % 2], vec![y]).unwrap()
        })
        .collect();
    let ds = Dataset::new(episodes, 1.0, vec![2]).unwrap();
    let pol = TabularPolicy::stationary(vec![vec![0.5, 0.5]]).unwrap();
    let cspec = ConfoundingSpec::single(1, 1e9);
    let est = final_bound(
        &ds,
        &pol,
        &pol,
        &cspec,
        KappaSpec::Tabular {
            bucketing: KappaBucketing::State(crate::behavior::StateBucketer::DiscreteState),
        },
        &opts(),
    )
    .unwrap();
    assert!(est.lower.is_finite() && est.upper.is_finite());
    assert!(est.lower >= -2.0 && est.upper <= 2.0);
}

#[test]
fn missing_kappa_for_unsupported_needed_action() {
    // Evaluation puts mass on action 1 but the data never takes it.
    let episodes: Vec<Episode> = (0..20)
        .map(|_| Episode::new(vec![StateRef::Discrete(0)], vec![0], vec![1.0]).unwrap())
        .collect();
    let ds = Dataset::new(episodes, 1.0, vec![2]).unwrap();
    let behavior = TabularPolicy::stationary(vec![vec![0.9, 0.1]]).unwrap();
    let evaluation = TabularPolicy::stationary(vec![vec![0.5, 0.5]]).unwrap();
    let err = final_bound(
        &ds,
        &behavior,
        &evaluation,
        &ConfoundingSpec::single(1, 2.0),
        KappaSpec::Tabular {
            bucketing: KappaBucketing::State(crate::behavior::StateBucketer::DiscreteState),
        },
        &opts(),
    )
    .unwrap_err();
    assert!(matches!(err, BoundError::MissingKappa { action: 1 }));
}

#[test]
fn overlap_report_for_identical_policies() {
    let (ds, pol) = unit_weight_dataset(&[1.0, -1.0, 0.5, 0.5]);
    let report = overlap_diagnostics(&ds, &pol, &pol, &opts()).unwrap();
    assert_eq!(report.max_step_rho, 1.0);
    assert!((report.ess - 4.0).abs() < 1e-9);
    assert_eq!(report.zero_weight_fraction, 0.0);
}

#[test]
fn ess_never_exceeds_n() {
    let mdp = random_mdp(3, 2, 2, 0.9, 71);
    let behavior = random_policy(3, 2, 0.2, 72);
    let evaluation = random_policy(3, 2, 0.05, 73);
    let ds = sample_episodes(&mdp, &behavior, 500, 3, ExecMode::Auto).unwrap();
    let report = overlap_diagnostics(&ds, &behavior, &evaluation, &opts()).unwrap();
    assert!(report.ess <= 500.0 + 1e-9);
    assert!(report.ess > 0.0);
}
