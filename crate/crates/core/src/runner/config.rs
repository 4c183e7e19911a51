// SPDX-License-Identifier: MIT OR Apache-2.0

//! Declarative experiment configuration (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::remote::RemoteBackend;
use crate::backend::scripted::{ScriptedBackend, ScriptedConfig};
use crate::backend::toy::{ToyConfig, ToyTransformer};
use crate::backend::{Backend, SamplingParams};
use crate::bandit::BanditConfig;
use crate::error::{Error, Result};
use crate::prompting::ScenarioKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub scenario: ScenarioKind,
    /// Interaction horizon `T`.
    pub horizon: u32,
    /// Completions per step during interaction.
    pub m: usize,
    /// Completions per prompt during evaluation.
    pub m_eval: usize,
    /// Number of runs `K` for dataset collection.
    pub k_runs: usize,
    /// Layer whose residual output is captured and steered (0-based).
    pub layer: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub beta: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::Buttons,
            horizon: 50,
            m: 25,
            m_eval: 15,
            k_runs: 65,
            layer: 4,
            temperature: 1.0,
            max_new_tokens: 128,
            beta: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditSection {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
}

impl Default for BanditSection {
    fn default() -> Self {
        Self {
            means: vec![100.0, 100.0],
            stddevs: vec![10.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_prompts: usize,
    pub prompt_seed: u64,
    /// Arm means of the environments evaluation prompts are drawn from.
    pub environments: Vec<Vec<f64>>,
    pub runs_per_env: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_prompts: 100,
            prompt_seed: 0,
            environments: vec![
                vec![95.0, 105.0],
                vec![99.0, 101.0],
                vec![101.0, 99.0],
                vec![105.0, 95.0],
            ],
            runs_per_env: 4,
        }
    }
}

/// Axes of the evaluation sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    /// Empty means every layer of the backend.
    pub layers: Vec<usize>,
    pub multipliers: Vec<f64>,
    pub temperatures: Vec<f64>,
    /// Runs per temperature in the temperature sweep.
    pub runs_per_temperature: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            layers: Vec::new(),
            multipliers: vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0],
            temperatures: vec![0.7, 1.0, 1.5, 2.0, 3.0],
            runs_per_temperature: 20,
        }
    }
}

impl SweepGrid {
    pub fn layers_for(&self, n_layers: usize) -> Vec<usize> {
        if self.layers.is_empty() {
            (0..n_layers).collect()
        } else {
            self.layers.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    /// Continuations launched after every generated token.
    pub s: usize,
    pub target_arm: usize,
}

impl Default for TraceSection {
    fn default() -> Self {
        Self { s: 20, target_arm: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Toy,
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub endpoint: String,
    pub toy: ToyConfig,
    pub scripted: ScriptedConfig,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            endpoint: "http://127.0.0.1:8080".into(),
            toy: ToyConfig::default(),
            scripted: ScriptedConfig::default(),
        }
    }
}

impl BackendSection {
    pub fn build(&self) -> Result<Box<dyn Backend>> {
        Ok(match self.kind {
            BackendKind::Toy => Box::new(ToyTransformer::new(self.toy.clone())?),
            BackendKind::Scripted => Box::new(ScriptedBackend::new(self.scripted.clone())?),
            BackendKind::Remote => Box::new(RemoteBackend::connect(&self.endpoint)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub experiment: ExperimentSection,
    pub bandit: BanditSection,
    pub eval: EvalSection,
    pub grid: SweepGrid,
    pub trace: TraceSection,
    pub backend: BackendSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            experiment: ExperimentSection::default(),
            bandit: BanditSection::default(),
            eval: EvalSection::default(),
            grid: SweepGrid::default(),
            trace: TraceSection::default(),
            backend: BackendSection::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    /// Apply a `dotted.key=value` override. The key must already exist;
    /// the value is read as a TOML literal, falling back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let mut tree = toml::Value::try_from(&*self).map_err(config_err)?;
        let mut node = &mut tree;
        for part in key.split('.') {
            node = node
                .as_table_mut()
                .and_then(|t| t.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        }
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
        *node = value;
        let cfg: Self = tree.try_into().map_err(config_err)?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.m == 0 || e.m_eval == 0 {
            return Err(Error::Config("m and m_eval must be at least 1".into()));
        }
        if e.k_runs == 0 {
            return Err(Error::Config("k_runs must be at least 1".into()));
        }
        if !(e.beta.is_finite()) {
            return Err(Error::Config("beta must be finite".into()));
        }
        self.sampling(0).validate().map_err(config_err)?;
        self.bandit_config(0).validate().map_err(config_err)?;
        for means in &self.eval.environments {
            if means.len() != self.bandit.stddevs.len() {
                return Err(Error::Config(format!(
                    "eval environment {means:?} has {} arms, bandit has {}",
                    means.len(),
                    self.bandit.stddevs.len()
                )));
            }
        }
        let g = &self.grid;
        if g.multipliers.is_empty() || g.temperatures.is_empty() {
            return Err(Error::Config("grid axes must be nonempty".into()));
        }
        if g.multipliers.iter().chain(&g.temperatures).any(|x| !x.is_finite()) {
            return Err(Error::Config("grid values must be finite".into()));
        }
        if g.temperatures.iter().any(|&t| t < 0.0) {
            return Err(Error::Config("temperatures must be nonnegative".into()));
        }
        if self.trace.s == 0 {
            return Err(Error::Config("trace.s must be at least 1".into()));
        }
        if self.trace.target_arm >= self.bandit.means.len() {
            return Err(Error::Config("trace.target_arm out of range".into()));
        }
        match self.backend.kind {
            BackendKind::Toy => self.backend.toy.validate().map_err(config_err)?,
            BackendKind::Scripted | BackendKind::Remote => {}
        }
        Ok(())
    }

    pub fn n_arms(&self) -> usize {
        self.bandit.means.len()
    }

    /// Bandit configuration with the given environment seed.
    pub fn bandit_config(&self, seed: u64) -> BanditConfig {
        BanditConfig::new(
            self.bandit.means.clone(),
            self.bandit.stddevs.clone(),
            self.experiment.horizon,
            seed,
        )
    }

    pub fn sampling(&self, seed: u64) -> SamplingParams {
        SamplingParams::new(self.experiment.temperature, self.experiment.max_new_tokens, seed)
    }
}
