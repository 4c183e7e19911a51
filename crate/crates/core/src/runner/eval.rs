// SPDX-License-Identifier: MIT OR Apache-2.0

//! Steering evaluation over prompt sets, parameter sweeps and token-level
//! action-probability traces.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::interaction::{recapture_dataset, run_interaction, run_many, run_seed, InteractionOptions};
use super::runlog::{RunLog, Termination};
use crate::backend::{Backend, Prompt, SamplingParams, SteeringSpec};
use crate::bandit::BanditConfig;
use crate::error::{Error, Result};
use crate::numeric::fsum;
use crate::parser::parse_action;
use crate::policy::{completion_seeds, estimate_distribution};
use crate::prompting::{ScenarioKind, Transcript};
use crate::seed::{self, stream};
use crate::steering::{compute_steering_vector, SteeringVector};

/// Draw `n` evaluation prompts from logged interactions: an environment
/// group uniformly at random, then a not-yet-drawn executed step of that
/// group uniformly at random.
pub fn sample_eval_prompts(groups: &[Vec<RunLog>], n: usize, seed: u64) -> Result<Vec<Transcript>> {
    let mut pools: Vec<Vec<(usize, u32)>> = groups
        .iter()
        .map(|g| {
            g.iter()
                .enumerate()
                .flat_map(|(r, log)| log.steps.iter().map(move |s| (r, s.t)))
                .collect()
        })
        .collect();
    let available: usize = pools.iter().map(Vec::len).sum();
    if available < n {
        return Err(Error::InvalidArgument(format!(
            "requested {n} prompts but the logs contain only {available} steps"
        )));
    }
    let mut rng = seed::rng(seed::split(seed, stream::EVAL_PROMPT, u64::MAX));
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let live: Vec<usize> = (0..pools.len()).filter(|&g| !pools[g].is_empty()).collect();
        let g = live[rng.random_range(0..live.len())];
        let pick = rng.random_range(0..pools[g].len());
        let (r, t) = pools[g].swap_remove(pick);
        out.push(groups[g][r].transcript_at(t)?);
    }
    Ok(out)
}

/// Run `runs_per_env` unsteered interactions in every environment (one
/// mean vector each) and sample `n_prompts` prompts from them.
pub fn make_eval_prompt_set(
    backend: &dyn Backend,
    base: &InteractionOptions,
    environments: &[Vec<f64>],
    runs_per_env: usize,
    n_prompts: usize,
    seed: u64,
) -> Result<(Vec<Transcript>, Vec<Vec<RunLog>>)> {
    let mut groups = Vec::with_capacity(environments.len());
    for (g, means) in environments.iter().enumerate() {
        let opts = InteractionOptions {
            bandit: BanditConfig {
                means: means.clone(),
                ..base.bandit.clone()
            },
            steering: None,
            capture_layer: None,
            env_seed: None,
            ..base.clone()
        };
        let runs = run_many(backend, &opts, seed::split(seed, stream::ENV, g as u64), 0, runs_per_env)?;
        groups.push(runs.into_iter().map(|r| r.log).collect::<Vec<_>>());
    }
    let prompts = sample_eval_prompts(&groups, n_prompts, seed)?;
    Ok((prompts, groups))
}

pub fn write_prompts(prompts: &[Transcript], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for p in prompts {
        writeln!(f, "{}", p.to_json()?)?;
    }
    Ok(())
}

pub fn read_prompts(path: &Path) -> Result<Vec<Transcript>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(Transcript::from_json)
        .collect()
}

/// One cell of an evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub layer: usize,
    pub beta: f64,
    /// Mean action entropy over prompts where it is defined.
    pub mean_entropy: f64,
    pub valid_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSetSummary {
    pub entropies: Vec<Option<f64>>,
    pub valid_fractions: Vec<f64>,
}

impl PromptSetSummary {
    pub fn mean_entropy(&self) -> f64 {
        let defined: Vec<f64> = self.entropies.iter().flatten().copied().collect();
        if defined.is_empty() {
            return f64::NAN;
        }
        fsum(defined.iter().copied()) / defined.len() as f64
    }

    pub fn valid_fraction(&self) -> f64 {
        fsum(self.valid_fractions.iter().copied()) / self.valid_fractions.len() as f64
    }
}

/// Estimate the action distribution at every prompt with `m_eval`
/// completions. Prompt `i` always uses the sampling seed
/// `split(seed, eval-prompt, i)`, whatever the steering.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_prompts(
    backend: &dyn Backend,
    prompts: &[Transcript],
    steering: Option<&SteeringSpec>,
    m_eval: usize,
    params: &SamplingParams,
    n_arms: usize,
    seed: u64,
) -> Result<PromptSetSummary> {
    if prompts.is_empty() {
        return Err(Error::InvalidArgument("prompt set is empty".into()));
    }
    let dists = prompts
        .par_iter()
        .enumerate()
        .map(|(i, tr)| {
            let p = params.with_seed(seed::split(seed, stream::EVAL_PROMPT, i as u64));
            estimate_distribution(backend, &Prompt::from_transcript(tr), &p, steering, m_eval, tr.scenario, n_arms)
                .map(|s| s.distribution)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PromptSetSummary {
        entropies: dists.iter().map(|d| d.entropy_nats).collect(),
        valid_fractions: dists.iter().map(|d| d.valid_fraction()).collect(),
    })
}

/// Mean entropy and valid fraction of `vector` at each multiplier.
#[allow(clippy::too_many_arguments)]
pub fn eval_steering(
    backend: &dyn Backend,
    prompts: &[Transcript],
    vector: &SteeringVector,
    multipliers: &[f64],
    m_eval: usize,
    params: &SamplingParams,
    n_arms: usize,
    seed: u64,
) -> Result<Vec<EntropyRow>> {
    multipliers
        .iter()
        .map(|&beta| {
            let spec = vector.spec(beta);
            let s = evaluate_prompts(backend, prompts, Some(&spec), m_eval, params, n_arms, seed)?;
            Ok(EntropyRow {
                layer: vector.layer,
                beta,
                mean_entropy: s.mean_entropy(),
                valid_fraction: s.valid_fraction(),
            })
        })
        .collect()
}

/// Per layer: re-capture the logged prompts' activations, build that
/// layer's vector and evaluate it at each multiplier.
#[allow(clippy::too_many_arguments)]
pub fn sweep_layers(
    backend: &dyn Backend,
    logs: &[RunLog],
    layers: &[usize],
    multipliers: &[f64],
    prompts: &[Transcript],
    m_eval: usize,
    params: &SamplingParams,
    n_arms: usize,
    seed: u64,
) -> Result<(Vec<SteeringVector>, Vec<EntropyRow>)> {
    let mut vectors = Vec::with_capacity(layers.len());
    let mut rows = Vec::new();
    for &layer in layers {
        let v = compute_steering_vector(&recapture_dataset(backend, logs, layer)?)?;
        rows.extend(eval_steering(backend, prompts, &v, multipliers, m_eval, params, n_arms, seed)?);
        vectors.push(v);
    }
    Ok((vectors, rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureResult {
    pub temperature: f64,
    pub runs: Vec<RunLog>,
}

impl TemperatureResult {
    /// Fraction of parsed completions over every evaluated step, including
    /// a terminal all-invalid step.
    pub fn validity_rate(&self) -> f64 {
        let (mut valid, mut total) = (0u64, 0u64);
        for log in &self.runs {
            for s in &log.steps {
                valid += u64::from(s.n_valid);
                total += u64::from(s.n_total);
            }
            if let Termination::AllInvalid { n_total, .. } = log.termination {
                total += u64::from(n_total);
            }
        }
        if total == 0 {
            return 0.0;
        }
        valid as f64 / total as f64
    }

    pub fn n_all_invalid(&self) -> usize {
        self.runs
            .iter()
            .filter(|l| matches!(l.termination, Termination::AllInvalid { .. }))
            .count()
    }
}

/// Run `n_runs` interactions per temperature. Run `k` uses the same
/// environment and sampling seeds at every temperature.
pub fn temperature_sweep(
    backend: &dyn Backend,
    opts: &InteractionOptions,
    temperatures: &[f64],
    n_runs: usize,
    master: u64,
) -> Result<Vec<TemperatureResult>> {
    if temperatures.is_empty() {
        return Err(Error::InvalidArgument("no temperatures".into()));
    }
    temperatures
        .iter()
        .map(|&tau| {
            let runs = (0..n_runs)
                .into_par_iter()
                .map(|k| {
                    let mut o = opts.clone();
                    o.params.temperature = tau;
                    o.env_seed = Some(seed::split(master, stream::ENV, k as u64));
                    run_interaction(backend, &o, run_seed(master, k), &super::interaction::run_id(k)).map(|r| r.log)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TemperatureResult { temperature: tau, runs })
        })
        .collect()
}

/// Probability of the target arm after each generated token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub index: usize,
    pub token: String,
    /// Empirical probability among parsed continuations; empty when none parsed.
    pub probability: Option<f64>,
    pub n_valid: usize,
}

/// Generate one completion and, after each of its tokens, sample `s` full
/// continuations from that prefix to estimate the probability of
/// `target_arm`.
#[allow(clippy::too_many_arguments)]
pub fn action_probability_trace(
    backend: &dyn Backend,
    prompt: &Prompt,
    params: &SamplingParams,
    steering: Option<&SteeringSpec>,
    s: usize,
    target_arm: usize,
    scenario: ScenarioKind,
    n_arms: usize,
    seed: u64,
) -> Result<Vec<TracePoint>> {
    if s == 0 {
        return Err(Error::InvalidArgument("s must be at least 1".into()));
    }
    let base = backend.generate(prompt, &params.with_seed(seed::split(seed, stream::TRACE, 0)), steering)?;
    let tokens = base
        .token_texts
        .unwrap_or_else(|| base.text.chars().map(String::from).collect());
    (1..=tokens.len())
        .into_par_iter()
        .map(|i| {
            let prefix: String = tokens[..i].concat();
            let full_prefix = format!("{}{prefix}", prompt.assistant_prefix);
            let p = prompt.with_prefix(full_prefix.clone());
            let seeds = completion_seeds(seed::split(seed, stream::TRACE, i as u64), s);
            let conts = backend.generate_many(&p, params, &seeds, steering)?;
            let arms: Vec<usize> = conts
                .iter()
                .filter_map(|c| parse_action(&format!("{full_prefix}{}", c.text), scenario, n_arms))
                .map(|a| a.arm)
                .collect();
            let hits = arms.iter().filter(|&&a| a == target_arm).count();
            Ok(TracePoint {
                index: i,
                token: tokens[i - 1].clone(),
                probability: (!arms.is_empty()).then(|| hits as f64 / arms.len() as f64),
                n_valid: arms.len(),
            })
        })
        .collect()
}
