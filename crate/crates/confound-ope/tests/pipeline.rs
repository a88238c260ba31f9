//! Cross-module integration checks: fitted behavior policies against the
//! generators' analytic marginals, weight clipping, split-fit consistency,
//! and IS bias signs on confounded data.

use std::sync::{Arc, OnceLock};

use confound_ope::autism::{generate_autism, AutismConfig, F_SLOW};
use confound_ope::behavior::{
    fit_logistic, fit_tabular, split_fit, FitOptions, LogisticOptions, PolicyRepr, StateBucketer,
    TimeBlockSpec,
};
use confound_ope::bounds::{is_estimate, overlap_diagnostics, EstimatorOptions};
use confound_ope::core::{Policy, StateRef};
use confound_ope::exec::ExecMode;
use confound_ope::sepsis::{simulate_confounded, SepsisDynamicsConfig, SepsisWorld, N_ACTIONS};

fn world() -> &'static Arc<SepsisWorld> {
    static WORLD: OnceLock<Arc<SepsisWorld>> = OnceLock::new();
    WORLD.get_or_init(|| Arc::new(SepsisWorld::build(SepsisDynamicsConfig::default()).unwrap()))
}

/// Fitted first-step probabilities converge to the analytic marginalized
/// behavior policy.
#[test]
fn tabular_fit_recovers_first_step_marginal_within_a_percent() {
    let w = world();
    let n = 100_000;
    let ds = simulate_confounded(w, 2.0, n, 123, ExecMode::Auto).unwrap();
    let fit = fit_tabular(
        &ds,
        &TimeBlockSpec::first_vs_rest(ds.horizon(), StateBucketer::DiscreteState),
        &FitOptions {
            alpha: 1.0,
            p_min: 1e-4,
        },
    )
    .unwrap();
    let mut max_err = 0.0_f64;
    for adm in &w.config.admissions {
        let s = confound_ope::sepsis::SepsisState {
            heart_rate: adm.heart_rate,
            blood_pressure: adm.blood_pressure,
            oxygen: adm.oxygen,
            glucose: adm.glucose,
            diabetic: adm.diabetic,
            antibiotics_on: false,
            vasopressors_on: false,
            ventilation_on: false,
        }
        .index();
        let analytic = w.marginal_first_step_row(2.0, s);
        let fitted = fit.action_probs(1, &StateRef::Discrete(s)).unwrap();
        for a in 0..N_ACTIONS {
            max_err = max_err.max((analytic[a] - fitted[a]).abs());
        }
    }
    assert!(max_err < 0.01, "max abs error {max_err}");
}

/// More data never hurts the tabular fit (error versus the analytic
/// marginal is non-increasing from n to 4n).
#[test]
fn tabular_fit_error_shrinks_with_more_data() {
    let w = world();
    let err_at = |n: usize| {
        let ds = simulate_confounded(w, 2.0, n, 321, ExecMode::Auto).unwrap();
        let fit = fit_tabular(
            &ds,
            &TimeBlockSpec::first_vs_rest(ds.horizon(), StateBucketer::DiscreteState),
            &FitOptions::default(),
        )
        .unwrap();
        let mut max_err = 0.0_f64;
        for adm in &w.config.admissions {
            let s = confound_ope::sepsis::SepsisState {
                heart_rate: adm.heart_rate,
                blood_pressure: adm.blood_pressure,
                oxygen: adm.oxygen,
                glucose: adm.glucose,
                diabetic: adm.diabetic,
                antibiotics_on: false,
                vasopressors_on: false,
                ventilation_on: false,
            }
            .index();
            let analytic = w.marginal_first_step_row(2.0, s);
            let fitted = fit.action_probs(1, &StateRef::Discrete(s)).unwrap();
            for a in 0..N_ACTIONS {
                max_err = max_err.max((analytic[a] - fitted[a]).abs());
            }
        }
        max_err
    };
    // Same seed: the larger dataset extends the smaller one episode-wise.
    assert!(err_at(100_000) <= err_at(25_000));
}

#[test]
fn logistic_fit_recovers_unconfounded_recourse_probability() {
    let cfg = AutismConfig::case2();
    let n = 20_000;
    let ds = generate_autism(&cfg, 1.0, n, 77, ExecMode::Auto).unwrap();
    let fit = fit_logistic(&ds, &LogisticOptions::default()).unwrap();
    // Average predicted P(A2 = intensify | slow) over slow responders.
    let mut total = 0.0;
    let mut count = 0.0;
    for ep in ds.episodes() {
        let state = ep.state_at(2).unwrap();
        if state.features().unwrap()[F_SLOW] > 0.5 {
            let row = fit.action_probs(2, state).unwrap();
            total += row[confound_ope::autism::A2_INTENSIFY];
            count += 1.0;
        }
    }
    let mean_p = total / count;
    let se = 0.5 / count.sqrt();
    assert!(
        (mean_p - 0.5).abs() <= 3.0 * se + 0.01,
        "P(intensify | slow) = {mean_p}"
    );
}

/// Weight clipping enforces the estimated-overlap cap.
#[test]
fn rho_cap_clips_extreme_ratios() {
    let w = world();
    let ds = simulate_confounded(w, 2.0, 5_000, 5, ExecMode::Auto).unwrap();
    let behavior = fit_tabular(
        &ds,
        &TimeBlockSpec::first_vs_rest(ds.horizon(), StateBucketer::DiscreteState),
        &FitOptions::default(),
    )
    .unwrap();
    let mut opts = EstimatorOptions::default();
    opts.weights.rho_cap = 1.5;
    let report = overlap_diagnostics(&ds, &behavior, &w.w_policy, &opts).unwrap();
    assert!(report.max_step_rho <= 1.5 + 1e-12);
    assert!(report.clipped_step_fraction > 0.0);

    // With the default cap nothing clips on this scenario.
    let report = overlap_diagnostics(&ds, &behavior, &w.w_policy, &EstimatorOptions::default())
        .unwrap();
    assert_eq!(report.clipped_step_fraction, 0.0);
    assert!(report.max_step_rho.is_finite());
    assert!(report.flags.is_empty(), "{:?}", report.flags);
}

#[test]
fn split_fit_halves_are_disjoint_and_policy_is_usable() {
    let w = world();
    let ds = simulate_confounded(w, 1.0, 10_000, 9, ExecMode::Auto).unwrap();
    let blocks = TimeBlockSpec::first_vs_rest(ds.horizon(), StateBucketer::DiscreteState);
    let (policy, held) = split_fit(&ds, 0.5, 42, |half| {
        assert_eq!(half.len(), 5_000);
        fit_tabular(half, &blocks, &FitOptions::default())
    })
    .unwrap();
    assert_eq!(held.len(), 5_000);
    let est = is_estimate(&held, &policy, &w.wo_policy, &EstimatorOptions::default()).unwrap();
    assert!(est.is_finite());
}

/// Confounding pushes standard OPE up for the with-antibiotics policy and
/// down for the without-antibiotics policy.
#[test]
fn is_bias_signs_match_the_confounding_direction() {
    let w = world();
    let oracle = w.oracle_values().unwrap();
    let ds = simulate_confounded(w, 2.0, 50_000, 2024, ExecMode::Auto).unwrap();
    let behavior = fit_tabular(
        &ds,
        &TimeBlockSpec::first_vs_rest(ds.horizon(), StateBucketer::DiscreteState),
        &FitOptions::default(),
    )
    .unwrap();
    let opts = EstimatorOptions::default();
    let is_w = is_estimate(&ds, &behavior, &w.w_policy, &opts).unwrap();
    let is_wo = is_estimate(&ds, &behavior, &w.wo_policy, &opts).unwrap();
    assert!(is_w > oracle.w, "IS(w) {is_w} should exceed truth {}", oracle.w);
    assert!(
        is_wo < oracle.wo,
        "IS(wo) {is_wo} should fall below truth {}",
        oracle.wo
    );
}

/// Serialized fitted policies keep their predictions bit-for-bit.
#[test]
fn fitted_policy_json_round_trip_preserves_probabilities() {
    let w = world();
    let ds = simulate_confounded(w, 2.0, 2_000, 4, ExecMode::Auto).unwrap();
    let fit = fit_tabular(
        &ds,
        &TimeBlockSpec::first_vs_rest(ds.horizon(), StateBucketer::DiscreteState),
        &FitOptions::default(),
    )
    .unwrap();
    let back = PolicyRepr::from_json(&fit.to_json()).unwrap();
    for ep in ds.episodes().iter().take(50) {
        for t in 1..=ep.horizon() {
            let a = fit.action_probs(t, ep.state_at(t).unwrap()).unwrap();
            let b = back.action_probs(t, ep.state_at(t).unwrap()).unwrap();
            assert_eq!(a, b);
        }
    }
}
