// SPDX-License-Identifier: MIT OR Apache-2.0

//! Template-sampling stand-in model whose action probabilities respond to
//! steering by construction.
//!
//! A completion is one of a fixed set of strings: a thought line followed
//! by an action line for arm 1 or 2, or by an unparseable action line. For
//! a prompt `P` and injected contribution `s = beta * u`:
//!
//! ```text
//! logit(P, s) = g0 + commitment * (n2(P) - n1(P)) + dot(w, s)
//! p(arm 2)    = logistic(logit)
//! p(invalid)  = clamp(invalid_rate + invalid_per_norm * |s|, 0, 1)
//! ```
//!
//! where `n1`/`n2` count earlier assistant turns that chose arm 1/2, so a
//! positive `commitment` makes the agent lock in. Thought lines are
//! uniform. Temperature does not change the distribution except that 0
//! picks the single most likely completion.
//!
//! Activations are synthetic:
//! `a(P, l) = noise_scale * h(P, l) + entropy_scale * H(P) * entropy_direction`
//! with `h` a unit vector derived from a SHA-256 of the templated prompt and
//! `H(P)` the binary action entropy of the unsteered model at `P`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    render_plain_chat, softmax_tempered, ActivationVector, Backend, BackendInfo, Finish, GenerationResult,
    PositionTag, Prompt, SamplingParams, SteeringSpec, StopCondition,
};
use crate::error::{Error, Result};
use crate::numeric::{dot, entropy_from_probs, l2_norm, logistic};
use crate::parser::parse_action;
use crate::prompting::{Role, ScenarioKind};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedConfig {
    pub dim: usize,
    pub n_layers: usize,
    pub g0: f64,
    pub commitment: f64,
    /// Readout of the injected contribution; empty means zero.
    pub w: Vec<f64>,
    /// Direction carrying the entropy signal; empty means the first axis.
    pub entropy_direction: Vec<f64>,
    pub entropy_scale: f64,
    pub noise_scale: f64,
    pub invalid_rate: f64,
    pub invalid_per_norm: f64,
    pub seed: u64,
}

impl Default for ScriptedConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            n_layers: 8,
            g0: 0.0,
            commitment: 0.0,
            w: Vec::new(),
            entropy_direction: Vec::new(),
            entropy_scale: 1.0,
            noise_scale: 1.0,
            invalid_rate: 0.0,
            invalid_per_norm: 0.0,
            seed: 0,
        }
    }
}

const THOUGHTS: [&str; 3] = [
    "I should keep comparing both options before committing.",
    "{E} 1 and {E} 2 have given similar results so far.",
    "Based on the results so far, I will make my choice.",
];

/// Render one candidate completion; `arm = None` renders the invalid form.
pub fn render_completion(scenario: ScenarioKind, thought: usize, arm: Option<usize>) -> String {
    let e = scenario.entity();
    let thought = THOUGHTS[thought % THOUGHTS.len()].replace("{E}", e);
    match arm {
        Some(a) => format!("Thought: {thought}\nAction: I choose {e} {}.", a + 1),
        None => format!("Thought: {thought}\nAction: I am not sure yet."),
    }
}

/// Split text into word pieces, each keeping its trailing whitespace.
pub fn word_pieces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_space = false;
    for c in text.chars() {
        if in_space && !c.is_whitespace() {
            out.push(std::mem::take(&mut cur));
            in_space = false;
        }
        if c.is_whitespace() {
            in_space = true;
        }
        cur.push(c);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    cfg: ScriptedConfig,
    w: Vec<f64>,
    direction: Vec<f64>,
}

impl ScriptedBackend {
    pub fn new(cfg: ScriptedConfig) -> Result<Self> {
        if cfg.dim == 0 || cfg.n_layers == 0 {
            return Err(Error::Config("scripted dim and n_layers must be positive".into()));
        }
        let w = if cfg.w.is_empty() { vec![0.0; cfg.dim] } else { cfg.w.clone() };
        let direction = if cfg.entropy_direction.is_empty() {
            let mut e = vec![0.0; cfg.dim];
            e[0] = 1.0;
            e
        } else {
            cfg.entropy_direction.clone()
        };
        for (name, v) in [("w", &w), ("entropy_direction", &direction)] {
            if v.len() != cfg.dim {
                return Err(Error::Config(format!(
                    "scripted {name} has length {} but dim is {}",
                    v.len(),
                    cfg.dim
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("scripted {name} must be finite")));
            }
        }
        if !(0.0..=1.0).contains(&cfg.invalid_rate) || cfg.invalid_per_norm < 0.0 {
            return Err(Error::Config("scripted invalid rates must lie in [0, 1]".into()));
        }
        Ok(Self { cfg, w, direction })
    }

    pub fn config(&self) -> &ScriptedConfig {
        &self.cfg
    }

    fn scenario_of(prompt: &Prompt) -> ScenarioKind {
        let first = prompt.messages.first().map_or("", |m| m.text.as_str());
        if first.to_ascii_lowercase().contains("slot machine") {
            ScenarioKind::SlotMachines
        } else {
            ScenarioKind::Buttons
        }
    }

    fn steering_delta(&self, steering: Option<&SteeringSpec>) -> Option<Vec<f64>> {
        steering.map(SteeringSpec::delta)
    }

    /// `logit(P, s)` for the second arm.
    pub fn logit(&self, prompt: &Prompt, steering: Option<&SteeringSpec>) -> f64 {
        let scenario = Self::scenario_of(prompt);
        let mut diff = 0.0;
        for m in prompt.messages.iter().filter(|m| m.role == Role::Assistant) {
            match parse_action(&m.text, scenario, 2).map(|p| p.arm) {
                Some(0) => diff -= 1.0,
                Some(_) => diff += 1.0,
                None => {}
            }
        }
        let push = self
            .steering_delta(steering)
            .map_or(0.0, |s| dot(&self.w, &s));
        self.cfg.g0 + self.cfg.commitment * diff + push
    }

    /// Probability of choosing the second arm among valid completions.
    pub fn p_second(&self, prompt: &Prompt, steering: Option<&SteeringSpec>) -> f64 {
        logistic(self.logit(prompt, steering))
    }

    pub fn p_invalid(&self, steering: Option<&SteeringSpec>) -> f64 {
        let norm = self.steering_delta(steering).map_or(0.0, |s| l2_norm(&s));
        (self.cfg.invalid_rate + self.cfg.invalid_per_norm * norm).clamp(0.0, 1.0)
    }

    /// Binary action entropy of the unsteered model at `prompt`.
    pub fn true_entropy(&self, prompt: &Prompt) -> f64 {
        let p = self.p_second(prompt, None);
        entropy_from_probs(&[1.0 - p, p])
    }

    /// Every candidate completion with its probability.
    pub fn candidates(&self, prompt: &Prompt, steering: Option<&SteeringSpec>) -> Vec<(String, f64)> {
        let scenario = Self::scenario_of(prompt);
        let p2 = self.p_second(prompt, steering);
        let q = self.p_invalid(steering);
        let n = THOUGHTS.len() as f64;
        let mut out = Vec::with_capacity(3 * THOUGHTS.len());
        for t in 0..THOUGHTS.len() {
            out.push((render_completion(scenario, t, Some(0)), (1.0 - q) * (1.0 - p2) / n));
            out.push((render_completion(scenario, t, Some(1)), (1.0 - q) * p2 / n));
            out.push((render_completion(scenario, t, None), q / n));
        }
        out
    }

    fn hash_unit(&self, text: &str, layer: usize) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.cfg.seed.to_le_bytes());
        h.update((layer as u64).to_le_bytes());
        h.update(text.as_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 8];
        key.copy_from_slice(&digest[..8]);
        let mut rng = seed::rng(u64::from_le_bytes(key));
        let v: Vec<f64> = (0..self.cfg.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = l2_norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> String {
        format!("scripted-d{}-L{}-seed{}", self.cfg.dim, self.cfg.n_layers, self.cfg.seed)
    }

    fn info(&self) -> BackendInfo {
        BackendInfo {
            n_layers: self.cfg.n_layers,
            hidden_dim: self.cfg.dim,
        }
    }

    fn generate(
        &self,
        prompt: &Prompt,
        params: &SamplingParams,
        steering: Option<&SteeringSpec>,
    ) -> Result<GenerationResult> {
        params.validate()?;
        if let Some(s) = steering {
            s.check(&self.info())?;
        }
        let prefix = prompt.assistant_prefix.as_str();
        let compatible: Vec<(String, f64)> = self
            .candidates(prompt, steering)
            .into_iter()
            .filter(|(c, p)| *p > 0.0 && c.starts_with(prefix))
            .collect();
        let chosen = if compatible.is_empty() {
            None
        } else if params.temperature == 0.0 {
            // First candidate with the highest probability.
            let mut best = 0;
            for (i, (_, p)) in compatible.iter().enumerate() {
                if *p > compatible[best].1 {
                    best = i;
                }
            }
            Some(best)
        } else {
            let total: f64 = compatible.iter().map(|(_, p)| p).sum();
            let u = seed::rng(params.seed).random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = compatible.len() - 1;
            for (i, (_, p)) in compatible.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            Some(pick)
        };
        let rest = chosen.map_or("", |i| &compatible[i].0[prefix.len()..]);

        let mut pieces = Vec::new();
        let mut text = String::new();
        let mut finished = Finish::Stop;
        for piece in word_pieces(rest) {
            if pieces.len() == params.max_new_tokens {
                finished = Finish::MaxTokens;
                break;
            }
            text.push_str(&piece);
            pieces.push(piece);
            if let StopCondition::Sentinel(s) = &params.stop {
                if !s.is_empty() && text.ends_with(s.as_str()) {
                    break;
                }
            }
        }
        Ok(GenerationResult {
            text,
            n_tokens: pieces.len(),
            finished,
            token_texts: Some(pieces),
        })
    }

    fn capture_prompt_activation(&self, prompt: &Prompt, layer: usize) -> Result<ActivationVector> {
        if layer >= self.cfg.n_layers {
            return Err(Error::LayerRange {
                layer,
                n_layers: self.cfg.n_layers,
            });
        }
        let text = render_plain_chat(&prompt.messages);
        let noise = self.hash_unit(&text, layer);
        let h = self.true_entropy(prompt);
        let values = noise
            .iter()
            .zip(&self.direction)
            .map(|(n, d)| self.cfg.noise_scale * n + self.cfg.entropy_scale * h * d)
            .collect();
        ActivationVector::new(values, layer, PositionTag::PromptLast)
    }

    /// Distribution over the two arms: `softmax([0, logit] / temperature)`.
    fn next_token_distribution(&self, prompt: &Prompt, params: &SamplingParams) -> Result<Vec<f64>> {
        softmax_tempered(&[0.0, self.logit(prompt, None)], params.temperature)
    }
}
