// SPDX-License-Identifier: MIT OR Apache-2.0

//! Independent oracles and fixtures shared by the integration targets.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use east::backend::scripted::{ScriptedBackend, ScriptedConfig};
use east::prompting::ChatMessage;
use east::runner::InteractionOptions;
use east::steering::Sample;
use east::{ActivationDataset, BanditConfig, Prompt, SamplingParams, ScenarioKind};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Direct rational evaluation of the entropy-weighted, run-centred average.
pub fn oracle_vector(runs: &[Vec<(Vec<f64>, f64)>]) -> Option<Vec<f64>> {
    let dim = runs.iter().flatten().next()?.0.len();
    let mut num = vec![BigRational::zero(); dim];
    let mut z = BigRational::zero();
    for run in runs {
        let n = BigRational::from_integer(BigInt::from(run.len()));
        let mean: Vec<BigRational> = (0..dim)
            .map(|j| run.iter().fold(BigRational::zero(), |acc, s| acc + rat(s.0[j])) / &n)
            .collect();
        for (a, h) in run {
            let h = rat(*h);
            for j in 0..dim {
                num[j] += &h * (rat(a[j]) - &mean[j]);
            }
            z += h;
        }
    }
    if z.is_zero() {
        return None;
    }
    Some(num.iter().map(|x| (x / &z).to_f64().unwrap()).collect())
}

/// Random ragged dataset with per-run offsets and some zero-entropy steps.
pub fn random_runs(rng: &mut ChaCha8Rng, max_k: usize, max_t: usize, max_d: usize) -> Vec<Vec<(Vec<f64>, f64)>> {
    let k = rng.random_range(1..=max_k);
    let d = rng.random_range(1..=max_d);
    let mut runs: Vec<Vec<(Vec<f64>, f64)>> = (0..k)
        .map(|_| {
            let t = rng.random_range(1..=max_t);
            let offset: Vec<f64> = (0..d).map(|_| 100.0 * normal(rng)).collect();
            (0..t)
                .map(|_| {
                    let a = offset.iter().map(|o| o + normal(rng)).collect();
                    let h = if rng.random_bool(0.2) {
                        0.0
                    } else {
                        rng.random_range(0.0..std::f64::consts::LN_2)
                    };
                    (a, h)
                })
                .collect()
        })
        .collect();
    if runs.iter().flatten().all(|s| s.1 == 0.0) {
        runs[0][0].1 = 0.5;
    }
    runs
}

pub fn dataset(runs: &[Vec<(Vec<f64>, f64)>], layer: usize) -> ActivationDataset {
    let runs = runs
        .iter()
        .map(|r| {
            r.iter()
                .map(|(a, h)| Sample {
                    activation: a.clone(),
                    entropy_nats: *h,
                })
                .collect()
        })
        .collect();
    ActivationDataset::new(layer, ScenarioKind::Buttons, runs).unwrap()
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(f64::MIN_POSITIVE)
}

fn ln_choose(n: u32, k: u32) -> f64 {
    (1..=k).map(|i| f64::from(n - k + i).ln() - f64::from(i).ln()).sum()
}

/// Mean and variance of the plug-in entropy of `n` Bernoulli(p) draws,
/// by enumeration over the binomial count.
pub fn binomial_entropy_moments(n: u32, p: f64) -> (f64, f64) {
    let (mut m1, mut m2) = (0.0, 0.0);
    for k in 0..=n {
        let w = if p == 0.0 {
            f64::from(u8::from(k == 0))
        } else if p == 1.0 {
            f64::from(u8::from(k == n))
        } else {
            (ln_choose(n, k) + f64::from(k) * p.ln() + f64::from(n - k) * (1.0 - p).ln()).exp()
        };
        let h: f64 = [k, n - k]
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let q = f64::from(c) / f64::from(n);
                -q * q.ln()
            })
            .sum();
        m1 += w * h;
        m2 += w * h * h;
    }
    (m1, m2 - m1 * m1)
}

pub fn user_prompt(text: &str) -> Prompt {
    Prompt::new(vec![ChatMessage::user(text)])
}

/// Scripted model that commits to its own earlier choices; `w` only
/// matters under steering.
pub fn committing_scripted(w: Vec<f64>) -> ScriptedBackend {
    ScriptedBackend::new(ScriptedConfig {
        g0: -2.0,
        commitment: 0.1,
        noise_scale: 0.05,
        w,
        ..ScriptedConfig::default()
    })
    .unwrap()
}

pub fn buttons_options(horizon: u32, m: usize) -> InteractionOptions {
    InteractionOptions::new(
        ScenarioKind::Buttons,
        BanditConfig::new(vec![100.0, 100.0], vec![10.0, 10.0], horizon, 0),
        m,
        SamplingParams::new(1.0, 128, 0),
    )
}
