// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use common::*;
use east::compute_steering_vector;
use proptest::prelude::*;

fn runs_strategy() -> impl Strategy<Value = Vec<Vec<(Vec<f64>, f64)>>> {
    (1usize..=6).prop_flat_map(|d| {
        let sample = (proptest::collection::vec(-1e3f64..1e3, d), 0.0f64..0.7);
        proptest::collection::vec(proptest::collection::vec(sample, 1..6), 1..5)
            .prop_filter("some entropy", |runs| runs.iter().flatten().any(|s| s.1 > 1e-3))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn agrees_with_rational_oracle(runs in runs_strategy()) {
        let got = compute_steering_vector(&dataset(&runs, 0)).unwrap();
        let want = oracle_vector(&runs).unwrap();
        for (g, w) in got.values.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-9, "{g} vs {w}");
        }
    }

    #[test]
    fn per_run_offsets_cancel(runs in runs_strategy(), shift in -1e4f64..1e4) {
        let base = compute_steering_vector(&dataset(&runs, 0)).unwrap().values;
        let moved: Vec<Vec<_>> = runs
            .iter()
            .enumerate()
            .map(|(k, r)| {
                r.iter()
                    .map(|(a, h)| (a.iter().map(|x| x + shift * (k as f64 + 1.0)).collect(), *h))
                    .collect()
            })
            .collect();
        let got = compute_steering_vector(&dataset(&moved, 0)).unwrap().values;
        let scale = base.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for (g, b) in got.iter().zip(&base) {
            prop_assert!((g - b).abs() <= 1e-6 * scale.max(shift.abs()));
        }
    }

    #[test]
    fn entropy_scale_cancels(runs in runs_strategy(), gamma in 0.01f64..100.0) {
        let base = compute_steering_vector(&dataset(&runs, 0)).unwrap().values;
        let scaled: Vec<Vec<_>> = runs
            .iter()
            .map(|r| r.iter().map(|(a, h)| (a.clone(), gamma * h)).collect())
            .collect();
        let got = compute_steering_vector(&dataset(&scaled, 0)).unwrap().values;
        prop_assert!(rel_l2(&got, &base) <= 1e-9 || base.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_entropy_run_changes_nothing(runs in runs_strategy(), extra in proptest::collection::vec(-1e3f64..1e3, 1..4)) {
        // A run whose steps all have zero entropy contributes nothing.
        let d = runs[0][0].0.len();
        let base = compute_steering_vector(&dataset(&runs, 0)).unwrap();
        let mut with = runs.clone();
        with.push(extra.iter().map(|&x| (vec![x; d], 0.0)).collect());
        let got = compute_steering_vector(&dataset(&with, 0)).unwrap();
        prop_assert_eq!(got.normalizer.to_bits(), base.normalizer.to_bits());
        for (g, b) in got.values.iter().zip(&base.values) {
            prop_assert_eq!(g.to_bits(), b.to_bits());
        }
    }
}
