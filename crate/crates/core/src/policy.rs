// SPDX-License-Identifier: MIT OR Apache-2.0

//! Empirical agent policy: sample completions, parse them, and summarize
//! the resulting action distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, Prompt, SamplingParams, SteeringSpec};
use crate::error::{Error, Result};
use crate::numeric::entropy_from_counts;
use crate::parser::parse_action;
use crate::prompting::ScenarioKind;
use crate::seed;

/// Categorical distribution over arms estimated from `n_total` completions.
///
/// Only parsed completions contribute; when none parse, `probs` and
/// `entropy_nats` are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub counts: Vec<u32>,
    pub probs: Option<Vec<f64>>,
    pub entropy_nats: Option<f64>,
    pub n_valid: u32,
    pub n_total: u32,
}

impl ActionDistribution {
    pub fn from_counts(counts: Vec<u32>, n_total: u32) -> Result<Self> {
        let n_valid: u32 = counts.iter().sum();
        if n_total == 0 || n_valid > n_total {
            return Err(Error::InvalidArgument(format!(
                "{n_valid} valid completions out of {n_total}"
            )));
        }
        let probs = (n_valid > 0).then(|| {
            counts
                .iter()
                .map(|&c| f64::from(c) / f64::from(n_valid))
                .collect()
        });
        Ok(Self {
            entropy_nats: entropy_from_counts(&counts),
            counts,
            probs,
            n_valid,
            n_total,
        })
    }

    /// Distribution from a multiset of parsed arms.
    pub fn from_arms(arms: &[usize], n_arms: usize, n_total: usize) -> Self {
        let mut counts = vec![0u32; n_arms];
        for &a in arms {
            counts[a] += 1;
        }
        Self::from_counts(counts, n_total as u32).expect("arms bounded by total")
    }

    pub fn n_arms(&self) -> usize {
        self.counts.len()
    }

    pub fn is_all_invalid(&self) -> bool {
        self.n_valid == 0
    }

    /// Fraction of completions that parsed.
    pub fn valid_fraction(&self) -> f64 {
        f64::from(self.n_valid) / f64::from(self.n_total)
    }
}

/// One policy evaluation: completions, their parses, and the distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSample {
    pub completions: Vec<String>,
    pub parsed: Vec<Option<usize>>,
    pub distribution: ActionDistribution,
}

/// Seeds for the `m` completions of one policy evaluation.
pub fn completion_seeds(step_seed: u64, m: usize) -> Vec<u64> {
    (0..m as u64)
        .map(|i| seed::split(step_seed, seed::stream::COMPLETION, i))
        .collect()
}

/// Draw `m` completions (seeds derived from `params.seed`), parse them and
/// estimate the action distribution.
pub fn estimate_distribution(
    backend: &dyn Backend,
    prompt: &Prompt,
    params: &SamplingParams,
    steering: Option<&SteeringSpec>,
    m: usize,
    scenario: ScenarioKind,
    n_arms: usize,
) -> Result<StepSample> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    let seeds = completion_seeds(params.seed, m);
    let results = backend.generate_many(prompt, params, &seeds, steering)?;
    let completions: Vec<String> = results.into_iter().map(|r| r.text).collect();
    let parsed: Vec<Option<usize>> = completions
        .iter()
        .map(|c| parse_action(c, scenario, n_arms).map(|p| p.arm))
        .collect();
    let arms: Vec<usize> = parsed.iter().flatten().copied().collect();
    Ok(StepSample {
        distribution: ActionDistribution::from_arms(&arms, n_arms, m),
        completions,
        parsed,
    })
}

/// Arm and rank within that arm for a uniform draw over valid completions.
fn draw_valid(dist: &ActionDistribution, seed: u64) -> Result<(usize, u32)> {
    if dist.is_all_invalid() {
        return Err(Error::AllInvalid);
    }
    let mut r = seed::rng(seed).random_range(0..dist.n_valid);
    for (arm, &c) in dist.counts.iter().enumerate() {
        if r < c {
            return Ok((arm, r));
        }
        r -= c;
    }
    unreachable!("draw below n_valid")
}

/// Sample the executed arm from the empirical multiset of valid actions.
pub fn select_action(dist: &ActionDistribution, seed: u64) -> Result<usize> {
    draw_valid(dist, seed).map(|(arm, _)| arm)
}

/// Like [`select_action`], also returning the index of a completion that
/// chose that arm (the one appended to the transcript).
pub fn select_completion(sample: &StepSample, seed: u64) -> Result<(usize, usize)> {
    let (arm, rank) = draw_valid(&sample.distribution, seed)?;
    let index = sample
        .parsed
        .iter()
        .enumerate()
        .filter(|(_, p)| **p == Some(arm))
        .nth(rank as usize)
        .map(|(i, _)| i)
        .expect("counts match parses");
    Ok((arm, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn entropy_examples() {
        let d = ActionDistribution::from_counts(vec![13, 12], 25).unwrap();
        assert!((d.entropy_nats.unwrap() - 0.6923).abs() < 1e-4);
        let d = ActionDistribution::from_counts(vec![25, 0], 25).unwrap();
        assert_eq!(d.entropy_nats, Some(0.0));
        let d = ActionDistribution::from_counts(vec![7, 7], 14).unwrap();
        assert!((d.entropy_nats.unwrap() - LN_2).abs() < 1e-12);
        assert!((LN_2 - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn all_invalid_is_flagged() {
        let d = ActionDistribution::from_counts(vec![0, 0], 25).unwrap();
        assert!(d.is_all_invalid());
        assert_eq!((d.probs.as_ref(), d.entropy_nats), (None, None));
        assert!(matches!(select_action(&d, 0), Err(Error::AllInvalid)));
    }

    #[test]
    fn bad_totals_rejected() {
        assert!(ActionDistribution::from_counts(vec![3, 3], 5).is_err());
        assert!(ActionDistribution::from_counts(vec![0, 0], 0).is_err());
    }

    #[test]
    fn valid_fraction_examples() {
        let f = |v: u32| ActionDistribution::from_counts(vec![v, 0], 25).unwrap().valid_fraction();
        assert_eq!(f(25), 1.0);
        assert_eq!(f(0), 0.0);
        assert_eq!(f(15), 0.6);
    }

    #[test]
    fn selection_follows_counts() {
        let d = ActionDistribution::from_counts(vec![25, 0], 25).unwrap();
        assert!((0..100).all(|s| select_action(&d, s).unwrap() == 0));

        let d = ActionDistribution::from_counts(vec![15, 10], 25).unwrap();
        let n = 100_000;
        let zeros = (0..n).filter(|&s| select_action(&d, s).unwrap() == 0).count();
        let freq = zeros as f64 / n as f64;
        assert!((freq - 0.6).abs() < 0.01, "{freq}");

        let d = ActionDistribution::from_counts(vec![1, 1], 2).unwrap();
        assert_eq!(select_action(&d, 77).unwrap(), select_action(&d, 77).unwrap());
    }

    #[test]
    fn selected_completion_has_selected_arm() {
        let sample = StepSample {
            completions: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            parsed: vec![Some(1), None, Some(0), Some(1)],
            distribution: ActionDistribution::from_counts(vec![1, 2], 4).unwrap(),
        };
        for s in 0..200 {
            let (arm, idx) = select_completion(&sample, s).unwrap();
            assert_eq!(sample.parsed[idx], Some(arm));
            assert_eq!(arm, select_action(&sample.distribution, s).unwrap());
        }
    }
}
