// SPDX-License-Identifier: MIT OR Apache-2.0

//! Model backends.
//!
//! A [`Backend`] generates completions for a chat prompt, optionally with
//! an activation injection, and exposes the residual activation of the last
//! prompt token at a chosen layer. Three implementations ship here:
//!
//! - [`toy::ToyTransformer`]: a small untrained decoder with a KV cache,
//!   used to test the injection mechanics themselves.
//! - [`scripted::ScriptedBackend`]: a template sampler whose action
//!   probabilities respond to steering by construction.
//! - [`remote::RemoteBackend`]: an HTTP client for the JSON wire protocol
//!   in [`wire`], with [`server::ReferenceServer`] as the loopback peer.
//!
//! Layers are numbered from 0. Steering at layer `l` adds `beta * u` to the
//! residual stream leaving block `l` (the input of block `l + 1`), and
//! [`Backend::capture_prompt_activation`] returns that same residual.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompting::{ChatMessage, Role, Transcript};

pub mod remote;
pub mod scripted;
pub mod server;
pub mod toy;
pub mod wire;

/// When generation stops before `max_new_tokens`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StopCondition {
    /// The backend's end-of-sequence token.
    #[default]
    EndToken,
    /// Stop once the generated text ends with this string (kept in the output).
    Sentinel(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    /// Softmax temperature; 0 selects greedy argmax decoding.
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
    #[serde(default)]
    pub stop: StopCondition,
}

impl SamplingParams {
    pub fn new(temperature: f64, max_new_tokens: usize, seed: u64) -> Self {
        Self {
            temperature,
            max_new_tokens,
            seed,
            stop: StopCondition::EndToken,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be finite and nonnegative, got {}",
                self.temperature
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidArgument("max_new_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// Where an activation was read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionTag {
    PromptLast,
    Generated(usize),
}

/// Residual-stream activation `z` at one layer and position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationVector {
    pub values: Vec<f64>,
    pub layer: usize,
    pub position: PositionTag,
}

impl ActivationVector {
    pub fn new(values: Vec<f64>, layer: usize, position: PositionTag) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("activation contains non-finite values".into()));
        }
        Ok(Self {
            values,
            layer,
            position,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Injection `z -> z + multiplier * vector` at `layer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringSpec {
    pub layer: usize,
    pub multiplier: f64,
    pub vector: Vec<f64>,
}

impl SteeringSpec {
    pub fn new(layer: usize, multiplier: f64, vector: Vec<f64>) -> Self {
        Self {
            layer,
            multiplier,
            vector,
        }
    }

    /// `multiplier * vector`.
    pub fn delta(&self) -> Vec<f64> {
        self.vector.iter().map(|v| self.multiplier * v).collect()
    }

    /// Check layer and dimension against a backend's shape.
    pub fn check(&self, info: &BackendInfo) -> Result<()> {
        if self.layer >= info.n_layers {
            return Err(Error::LayerRange {
                layer: self.layer,
                n_layers: info.n_layers,
            });
        }
        if self.vector.len() != info.hidden_dim {
            return Err(Error::DimMismatch {
                expected: info.hidden_dim,
                got: self.vector.len(),
            });
        }
        if !self.multiplier.is_finite() || self.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("steering contains non-finite values".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Finish {
    Stop,
    MaxTokens,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    /// Newly generated text (excluding any assistant prefix).
    pub text: String,
    pub n_tokens: usize,
    pub finished: Finish,
    /// Per-token text pieces; their concatenation equals `text`.
    pub token_texts: Option<Vec<String>>,
}

/// Shape of a backend's hidden state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub n_layers: usize,
    pub hidden_dim: usize,
}

/// Chat prompt plus an optional forced start of the assistant reply.
///
/// Prefix tokens are treated as already-generated tokens: they are
/// steered like any other generated position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub assistant_prefix: String,
}

impl Prompt {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            assistant_prefix: String::new(),
        }
    }

    pub fn from_transcript(transcript: &Transcript) -> Self {
        Self::new(transcript.to_chat_messages())
    }

    pub fn with_prefix(&self, prefix: impl Into<String>) -> Self {
        Self {
            messages: self.messages.clone(),
            assistant_prefix: prefix.into(),
        }
    }
}

/// Plain-text chat template used by the in-process backends:
/// `USER: ...\nASSISTANT: ...\n` per message, then `ASSISTANT:` opening the
/// reply, followed by the assistant prefix if any.
pub fn render_plain_chat(messages: &[ChatMessage]) -> String {
    let mut out = String::new();
    for m in messages {
        out.push_str(match m.role {
            Role::User => "USER: ",
            Role::Assistant => "ASSISTANT: ",
        });
        out.push_str(&m.text);
        out.push('\n');
    }
    out.push_str("ASSISTANT:");
    out
}

/// Uniform model interface.
///
/// Implementations are shareable across threads; every call owns its own
/// sampling state and cache.
pub trait Backend: Send + Sync {
    /// Stable identifier recorded in run logs.
    fn id(&self) -> String;

    fn info(&self) -> BackendInfo;

    fn generate(
        &self,
        prompt: &Prompt,
        params: &SamplingParams,
        steering: Option<&SteeringSpec>,
    ) -> Result<GenerationResult>;

    /// One generation per seed, results in seed order.
    fn generate_many(
        &self,
        prompt: &Prompt,
        params: &SamplingParams,
        seeds: &[u64],
        steering: Option<&SteeringSpec>,
    ) -> Result<Vec<GenerationResult>> {
        seeds
            .par_iter()
            .map(|&s| self.generate(prompt, &params.with_seed(s), steering))
            .collect()
    }

    /// Residual leaving block `layer` at the last token of the templated prompt.
    fn capture_prompt_activation(&self, prompt: &Prompt, layer: usize) -> Result<ActivationVector>;

    /// Next-token distribution `softmax(logits / temperature)`.
    fn next_token_distribution(&self, prompt: &Prompt, params: &SamplingParams) -> Result<Vec<f64>>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn id(&self) -> String {
        (**self).id()
    }
    fn info(&self) -> BackendInfo {
        (**self).info()
    }
    fn generate(&self, p: &Prompt, s: &SamplingParams, st: Option<&SteeringSpec>) -> Result<GenerationResult> {
        (**self).generate(p, s, st)
    }
    fn generate_many(
        &self,
        p: &Prompt,
        s: &SamplingParams,
        seeds: &[u64],
        st: Option<&SteeringSpec>,
    ) -> Result<Vec<GenerationResult>> {
        (**self).generate_many(p, s, seeds, st)
    }
    fn capture_prompt_activation(&self, p: &Prompt, layer: usize) -> Result<ActivationVector> {
        (**self).capture_prompt_activation(p, layer)
    }
    fn next_token_distribution(&self, p: &Prompt, s: &SamplingParams) -> Result<Vec<f64>> {
        (**self).next_token_distribution(p, s)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn info(&self) -> BackendInfo {
        (**self).info()
    }
    fn generate(&self, p: &Prompt, s: &SamplingParams, st: Option<&SteeringSpec>) -> Result<GenerationResult> {
        (**self).generate(p, s, st)
    }
    fn generate_many(
        &self,
        p: &Prompt,
        s: &SamplingParams,
        seeds: &[u64],
        st: Option<&SteeringSpec>,
    ) -> Result<Vec<GenerationResult>> {
        (**self).generate_many(p, s, seeds, st)
    }
    fn capture_prompt_activation(&self, p: &Prompt, layer: usize) -> Result<ActivationVector> {
        (**self).capture_prompt_activation(p, layer)
    }
    fn next_token_distribution(&self, p: &Prompt, s: &SamplingParams) -> Result<Vec<f64>> {
        (**self).next_token_distribution(p, s)
    }
}

/// `softmax(logits / temperature)`, computed stably.
pub fn softmax_tempered(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tempered softmax needs temperature > 0, got {temperature}; use greedy decoding for 0"
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Index of the largest logit; ties go to the smallest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate().skip(1) {
        if l > logits[best] {
            best = i;
        }
    }
    best
}

/// Draw an index from `probs` using a uniform variate in `[0, 1)`.
pub(crate) fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_nonzero
}
