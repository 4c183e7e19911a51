// SPDX-License-Identifier: MIT OR Apache-2.0

//! The agent loop and activation dataset collection.

use std::path::Path;

use rayon::prelude::*;

use super::runlog::{RunHeader, RunLog, StepRecord, SteeringRef, Termination, RUNLOG_SCHEMA};
use super::sidecar::Sidecar;
use crate::backend::{Backend, Prompt, SamplingParams, SteeringSpec};
use crate::bandit::{feedback_text, BanditConfig, BanditEnv};
use crate::error::{Error, Result};
use crate::policy::{estimate_distribution, select_completion};
use crate::prompting::{ScenarioKind, Transcript};
use crate::seed::{self, stream};
use crate::steering::{ActivationDataset, Sample, SteeringVector};

/// Everything about an interaction except its seed.
#[derive(Debug, Clone)]
pub struct InteractionOptions {
    pub scenario: ScenarioKind,
    /// Means, stddevs and horizon; the seed field is ignored.
    pub bandit: BanditConfig,
    pub m: usize,
    /// Temperature, token budget and stop condition; the seed is ignored.
    pub params: SamplingParams,
    pub steering: Option<SteeringVector>,
    pub multiplier: f64,
    pub capture_layer: Option<usize>,
    /// Fixed environment seed; by default it is derived from the run seed.
    pub env_seed: Option<u64>,
    /// Replaces the bundled scenario prompt.
    pub system_text: Option<String>,
}

impl InteractionOptions {
    pub fn new(scenario: ScenarioKind, bandit: BanditConfig, m: usize, params: SamplingParams) -> Self {
        Self {
            scenario,
            bandit,
            m,
            params,
            steering: None,
            multiplier: 0.0,
            capture_layer: None,
            env_seed: None,
            system_text: None,
        }
    }

    pub fn with_steering(mut self, vector: SteeringVector, multiplier: f64) -> Self {
        self.steering = Some(vector);
        self.multiplier = multiplier;
        self
    }

    pub fn with_capture(mut self, layer: usize) -> Self {
        self.capture_layer = Some(layer);
        self
    }
}

/// A finished interaction and its captured activations (one row per
/// executed step, in step order).
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub log: RunLog,
    pub activations: Option<Sidecar>,
}

pub fn run_id(index: usize) -> String {
    format!("run-{index:04}")
}

/// Seed of run `index` under a master seed.
pub fn run_seed(master: u64, index: usize) -> u64 {
    seed::split(master, stream::RUN, index as u64)
}

/// Play one episode: at each step estimate the policy from `m` completions,
/// execute one valid completion, and feed back the reward.
pub fn run_interaction(
    backend: &dyn Backend,
    opts: &InteractionOptions,
    run_seed: u64,
    run_id: &str,
) -> Result<Interaction> {
    if opts.m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    opts.params.validate()?;
    let env_seed = opts.env_seed.unwrap_or_else(|| seed::split(run_seed, stream::ENV, 0));
    let bandit = BanditConfig {
        seed: env_seed,
        ..opts.bandit.clone()
    };
    let mut env = BanditEnv::new(bandit.clone())?;
    let n_arms = env.n_arms();
    let mut transcript = match &opts.system_text {
        Some(text) => Transcript::with_system_text(opts.scenario, bandit.horizon, text.clone())?,
        None => Transcript::new(opts.scenario, bandit.horizon),
    };
    let spec: Option<SteeringSpec> = opts.steering.as_ref().map(|v| v.spec(opts.multiplier));
    if let Some(s) = &spec {
        s.check(&backend.info())?;
    }
    if let Some(layer) = opts.capture_layer {
        let n_layers = backend.info().n_layers;
        if layer >= n_layers {
            return Err(Error::LayerRange { layer, n_layers });
        }
    }
    let mut sidecar = opts.capture_layer.map(|_| Sidecar::new(backend.info().hidden_dim));

    let header = RunHeader {
        schema: RUNLOG_SCHEMA,
        run_id: run_id.to_owned(),
        scenario: opts.scenario,
        bandit,
        backend_id: backend.id(),
        steering: opts.steering.as_ref().map(|v| SteeringRef {
            layer: v.layer,
            multiplier: opts.multiplier,
            vector_hash: v.metadata.dataset_hash.clone(),
            control: v.control,
        }),
        system_text: transcript.system_text.clone(),
        run_seed,
        m: opts.m,
        temperature: opts.params.temperature,
        max_new_tokens: opts.params.max_new_tokens,
        capture_layer: opts.capture_layer,
        activation_file: opts.capture_layer.map(|_| format!("{run_id}.eact")),
        capture_backend_id: None,
    };

    let mut steps = Vec::new();
    let mut termination = Termination::Completed;
    for t in 1..=header.bandit.horizon {
        let prompt = Prompt::from_transcript(&transcript);
        let step = (|| -> Result<_> {
            let activation = match opts.capture_layer {
                Some(layer) => Some(backend.capture_prompt_activation(&prompt, layer)?),
                None => None,
            };
            let params = opts.params.with_seed(seed::split(run_seed, stream::STEP, u64::from(t)));
            let sample = estimate_distribution(backend, &prompt, &params, spec.as_ref(), opts.m, opts.scenario, n_arms)?;
            Ok((activation, sample))
        })();
        let (activation, sample) = match step {
            Ok(x) => x,
            Err(e) => {
                tracing::warn!(run_id, t, "backend failure: {e}");
                termination = Termination::Aborted {
                    t,
                    message: e.to_string(),
                };
                break;
            }
        };
        let dist = &sample.distribution;
        let Some(entropy) = dist.entropy_nats else {
            termination = Termination::AllInvalid {
                t,
                n_total: dist.n_total,
            };
            break;
        };
        let (arm, idx) = select_completion(&sample, seed::split(run_seed, stream::SELECT, u64::from(t)))?;
        let reward = env.pull(arm)?;
        transcript.push_turn(&sample.completions[idx], &feedback_text(&reward, opts.scenario))?;
        let activation_offset = match (&mut sidecar, activation) {
            (Some(sc), Some(a)) => Some(sc.push(a.values.iter().map(|&x| x as f32).collect())?),
            _ => None,
        };
        steps.push(StepRecord {
            t,
            chosen_action: arm,
            chosen_completion: idx,
            reward: reward.value,
            counts: dist.counts.clone(),
            n_valid: dist.n_valid,
            n_total: dist.n_total,
            entropy_nats: entropy,
            completions: sample.completions,
            parsed: sample.parsed,
            activation_offset,
        });
    }
    Ok(Interaction {
        log: RunLog {
            header,
            steps,
            termination,
        },
        activations: sidecar,
    })
}

/// `n_runs` independent interactions, run `k` seeded by
/// [`run_seed`]`(master, first + k)`; parallel over runs.
pub fn run_many(
    backend: &dyn Backend,
    opts: &InteractionOptions,
    master: u64,
    first: usize,
    n_runs: usize,
) -> Result<Vec<Interaction>> {
    (first..first + n_runs)
        .into_par_iter()
        .map(|k| run_interaction(backend, opts, run_seed(master, k), &run_id(k)))
        .collect()
}

/// Pair each executed step's captured activation with its entropy.
///
/// Runs with no executed step are dropped; steps whose entropy was
/// undefined (all completions invalid) are never executed and are counted
/// in `n_excluded`.
pub fn dataset_from_runs(runs: &[(RunLog, Sidecar)]) -> Result<ActivationDataset> {
    let first = runs.first().ok_or(Error::EmptyDataset)?;
    let layer = first.0.header.capture_layer.ok_or_else(|| {
        Error::InvalidArgument(format!("run {} has no captured activations", first.0.header.run_id))
    })?;
    let scenario = first.0.header.scenario;
    let mut out = Vec::new();
    let mut n_excluded = 0;
    for (log, sidecar) in runs {
        if log.header.capture_layer != Some(layer) || log.header.scenario != scenario {
            return Err(Error::InvalidArgument(format!(
                "run {} differs in layer or scenario",
                log.header.run_id
            )));
        }
        if log.is_aborted() {
            return Err(Error::InvalidArgument(format!("run {} was aborted", log.header.run_id)));
        }
        if matches!(log.termination, Termination::AllInvalid { .. }) {
            n_excluded += 1;
        }
        let mut run = Vec::with_capacity(log.steps.len());
        for s in &log.steps {
            let offset = s.activation_offset.ok_or_else(|| {
                Error::InvalidArgument(format!("run {} step {} has no activation", log.header.run_id, s.t))
            })?;
            run.push(Sample {
                activation: sidecar.row_at(offset)?.iter().map(|&x| f64::from(x)).collect(),
                entropy_nats: s.entropy_nats,
            });
        }
        if !run.is_empty() {
            out.push(run);
        }
    }
    let mut ds = ActivationDataset::new(layer, scenario, out)?;
    ds.n_excluded = n_excluded;
    Ok(ds)
}

/// Run `k` interactions capturing activations at `layer` and assemble the
/// steering dataset.
pub fn collect_dataset(
    backend: &dyn Backend,
    opts: &InteractionOptions,
    k: usize,
    layer: usize,
    master: u64,
) -> Result<(ActivationDataset, Vec<Interaction>)> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let opts = opts.clone().with_capture(layer);
    let runs = run_many(backend, &opts, master, 0, k)?;
    if let Some(r) = runs.iter().find(|r| r.log.is_aborted()) {
        if let Termination::Aborted { message, .. } = &r.log.termination {
            return Err(Error::Transport(format!("{}: {message}", r.log.header.run_id)));
        }
    }
    let pairs: Vec<(RunLog, Sidecar)> = runs
        .iter()
        .map(|r| (r.log.clone(), r.activations.clone().expect("capture enabled")))
        .collect();
    Ok((dataset_from_runs(&pairs)?, runs))
}

/// Write a run's log and sidecar under `dir`.
pub fn write_interaction(dir: &Path, run: &Interaction) -> Result<()> {
    run.log.write(&dir.join(format!("{}.jsonl", run.log.header.run_id)))?;
    if let (Some(sc), Some(name)) = (&run.activations, &run.log.header.activation_file) {
        sc.write(&dir.join(name))?;
    }
    Ok(())
}

/// Read every run log in `dir` with its sidecar and assemble the dataset.
pub fn dataset_from_dir(dir: &Path) -> Result<ActivationDataset> {
    let mut pairs = Vec::new();
    for (path, log) in super::runlog::read_dir(dir)? {
        let name = log.header.activation_file.clone().ok_or_else(|| Error::RunLog {
            path: path.clone(),
            detail: "no activation file".into(),
        })?;
        let sc = Sidecar::read(&dir.join(name))?;
        pairs.push((log, sc));
    }
    dataset_from_runs(&pairs)
}

/// Re-capture activations at `layer` along every executed step of `logs`,
/// returning the runs with fresh sidecars.
pub fn recapture_runs(backend: &dyn Backend, logs: &[RunLog], layer: usize) -> Result<Vec<Interaction>> {
    let info = backend.info();
    if layer >= info.n_layers {
        return Err(Error::LayerRange {
            layer,
            n_layers: info.n_layers,
        });
    }
    let id = backend.id();
    logs.par_iter()
        .map(|log| {
            let mut log = log.clone();
            let mut sidecar = Sidecar::new(info.hidden_dim);
            for i in 0..log.steps.len() {
                let prompt = Prompt::from_transcript(&log.transcript_at(log.steps[i].t)?);
                let a = backend.capture_prompt_activation(&prompt, layer)?;
                log.steps[i].activation_offset = Some(sidecar.push(a.values.iter().map(|&x| x as f32).collect())?);
            }
            log.header.capture_layer = Some(layer);
            log.header.activation_file = Some(format!("{}.eact", log.header.run_id));
            log.header.capture_backend_id = (id != log.header.backend_id).then(|| id.clone());
            Ok(Interaction {
                log,
                activations: Some(sidecar),
            })
        })
        .collect()
}

/// Steering dataset from activations re-captured at `layer` along `logs`.
pub fn recapture_dataset(backend: &dyn Backend, logs: &[RunLog], layer: usize) -> Result<ActivationDataset> {
    let runs = recapture_runs(backend, logs, layer)?;
    let pairs: Vec<(RunLog, Sidecar)> = runs
        .into_iter()
        .map(|r| (r.log, r.activations.expect("captured")))
        .collect();
    dataset_from_runs(&pairs)
}
