//! Property tests for the core data model and closed-form pieces.

use confound_ope::bounds::toy_confounded_likelihood;
use confound_ope::core::{
    discounted_return, history_key, step_weights, Episode, Policy, StateRef, WeightOptions,
};
use confound_ope::tabular_mdp::TabularPolicy;
use proptest::prelude::*;

fn episode_strategy(horizon: usize) -> impl Strategy<Value = Episode> {
    (
        prop::collection::vec(0usize..4, horizon),
        prop::collection::vec(0usize..3, horizon),
        prop::collection::vec(-5.0f64..5.0, horizon),
    )
        .prop_map(|(states, actions, rewards)| {
            Episode::new(
                states.into_iter().map(StateRef::Discrete).collect(),
                actions,
                rewards,
            )
            .unwrap()
        })
}

proptest! {
    #[test]
    fn discounted_return_is_linear_in_rewards(
        states in prop::collection::vec(0usize..4, 4),
        r1 in prop::collection::vec(-5.0f64..5.0, 4),
        r2 in prop::collection::vec(-5.0f64..5.0, 4),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        discount in 0.1f64..1.0,
    ) {
        let mk = |rewards: Vec<f64>| Episode::new(
            states.iter().map(|&s| StateRef::Discrete(s)).collect(),
            vec![0; 4],
            rewards,
        ).unwrap();
        let combo: Vec<f64> = r1.iter().zip(&r2).map(|(x, y)| a * x + b * y).collect();
        let lhs = discounted_return(&mk(combo), discount).unwrap();
        let rhs = a * discounted_return(&mk(r1), discount).unwrap()
            + b * discounted_return(&mk(r2), discount).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    /// Scaling a behavior row before normalization leaves every importance
    /// ratio unchanged.
    #[test]
    fn step_weights_are_scale_consistent(
        ep in episode_strategy(3),
        raw in prop::collection::vec(0.05f64..2.0, 12),
        scale in 0.1f64..10.0,
    ) {
        let rows_from = |weights: &[f64]| -> Vec<Vec<f64>> {
            weights
                .chunks(3)
                .map(|row| {
                    let total: f64 = row.iter().sum();
                    row.iter().map(|w| w / total).collect()
                })
                .collect()
        };
        let base = TabularPolicy::stationary(rows_from(&raw)).unwrap();
        let scaled_raw: Vec<f64> = raw.iter().map(|w| w * scale).collect();
        let scaled = TabularPolicy::stationary(rows_from(&scaled_raw)).unwrap();
        let eval = TabularPolicy::stationary(vec![vec![1.0, 0.0, 0.0]; 4]).unwrap();
        let opts = WeightOptions::default();
        let w1 = step_weights(&ep, &base, &eval, &opts).unwrap();
        let w2 = step_weights(&ep, &scaled, &eval, &opts).unwrap();
        for (a, b) in w1.rho().iter().zip(w2.rho()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn history_keys_agree_exactly_on_shared_prefixes(
        ep1 in episode_strategy(4),
        ep2 in episode_strategy(4),
        t in 1usize..=4,
    ) {
        let k1 = history_key(&ep1, t).unwrap().discrete_key().unwrap();
        let k2 = history_key(&ep2, t).unwrap().discrete_key().unwrap();
        let same_prefix = ep1.states()[..t] == ep2.states()[..t]
            && ep1.actions()[..t - 1] == ep2.actions()[..t - 1];
        prop_assert_eq!(same_prefix, k1 == k2);
    }

    #[test]
    fn weight_products_split_at_any_step(
        ep in episode_strategy(4),
        split in 1usize..=4,
    ) {
        let behavior = TabularPolicy::stationary(vec![vec![0.5, 0.3, 0.2]; 4]).unwrap();
        let eval = TabularPolicy::stationary(vec![vec![0.2, 0.5, 0.3]; 4]).unwrap();
        let w = step_weights(&ep, &behavior, &eval, &WeightOptions::default()).unwrap();
        let product = w.product_range(1, split - 1)
            * w.rho()[split - 1]
            * w.product_range(split + 1, 4);
        prop_assert!((product - w.product_all()).abs() <= 1e-12 * (1.0 + product.abs()));
    }

    #[test]
    fn toy_ratio_matches_for_any_gamma(gamma in 1.0f64..50.0, t in 1u32..=6) {
        let (p1, p0) = toy_confounded_likelihood(gamma, t).unwrap();
        let ratio = p1 / p0;
        let expect = gamma.powf(t as f64 / 2.0);
        prop_assert!((ratio - expect).abs() <= 1e-9 * expect);
    }
}

/// Compile-time style check that fitted policies can be queried through the
/// trait object used across the estimators.
#[test]
fn policies_work_as_trait_objects() {
    let p = TabularPolicy::stationary(vec![vec![0.5, 0.5]]).unwrap();
    let dynp: &dyn Policy = &p;
    assert_eq!(
        dynp.action_prob(1, &StateRef::Discrete(0), 1).unwrap(),
        0.5
    );
}
