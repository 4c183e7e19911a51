// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic inputs for the benchmarks.

use east::seed;
use east::steering::Sample;
use east::{ActivationDataset, ScenarioKind};

fn uniform(seed: u64, index: u64) -> f64 {
    (seed::split(seed, "bench", index) >> 11) as f64 / (1u64 << 53) as f64
}

/// `k` runs of `t` steps with `d`-dimensional activations.
pub fn synthetic_dataset(k: usize, t: usize, d: usize, seed: u64) -> ActivationDataset {
    let mut i = 0u64;
    let mut next = || {
        i += 1;
        uniform(seed, i)
    };
    let runs = (0..k)
        .map(|_| {
            (0..t)
                .map(|_| Sample {
                    activation: (0..d).map(|_| 2.0 * next() - 1.0).collect(),
                    entropy_nats: next() * std::f64::consts::LN_2,
                })
                .collect()
        })
        .collect();
    ActivationDataset::new(0, ScenarioKind::Buttons, runs).expect("non-empty dataset")
}

/// A mix of well-formed and malformed completions.
pub fn completions(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match i % 4 {
            0 => format!("Thought: Button 1 looked better.\nAction: I choose Button {}.", i % 2 + 1),
            1 => "Thought: still unsure.\nAction: press Button 2".to_owned(),
            2 => "I think Button 1 and then Button 2 are both fine".to_owned(),
            _ => "no action here at all".to_owned(),
        })
        .collect()
}
