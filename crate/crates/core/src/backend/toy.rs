// SPDX-License-Identifier: MIT OR Apache-2.0

//! Untrained byte-level decoder-only transformer.
//!
//! Pre-norm blocks (attention then MLP), learned positional embeddings,
//! 256 byte tokens plus one end token. Weights are `Normal(0, 0.02)` from a
//! pinned seed; layer-norm gains start at 1 and all biases at 0. Everything
//! runs in `f64` so injection arithmetic can be checked to tight tolerances.
//!
//! Text codec: a token byte `b` decodes to the char `U+00bb`, and on input
//! chars up to `U+00FF` encode to that single byte while wider chars encode
//! as UTF-8. ASCII is unchanged, generated text always re-encodes to the
//! same tokens, and token pieces concatenate to the completion text.
//!
//! Context handling: the templated prompt keeps its last
//! `context - reserve` tokens; the assistant prefix and generated tokens
//! share the remaining `reserve` positions.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    argmax, render_plain_chat, sample_index, softmax_tempered, ActivationVector, Backend, BackendInfo,
    Finish, GenerationResult, PositionTag, Prompt, SamplingParams, SteeringSpec, StopCondition,
};
use crate::error::{Error, Result};
use crate::seed;

pub const VOCAB: usize = 257;
pub const END_TOKEN: usize = 256;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub context: usize,
    /// Positions reserved for the assistant prefix plus generated tokens.
    pub reserve: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_layers: 8,
            d_model: 64,
            n_heads: 4,
            context: 512,
            reserve: 128,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 {
            return bad("toy model dimensions must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.reserve == 0 || self.reserve >= self.context {
            return bad(format!(
                "reserve {} must be in 1..context ({})",
                self.reserve, self.context
            ));
        }
        Ok(())
    }
}

/// `y = W x + b`, `W` stored row-major as `out x in`.
#[derive(Debug, Clone)]
struct Linear {
    w: Vec<f64>,
    b: Vec<f64>,
    d_in: usize,
}

impl Linear {
    fn random<R: Rng>(rng: &mut R, normal: &Normal<f64>, d_in: usize, d_out: usize) -> Self {
        Self {
            w: (0..d_in * d_out).map(|_| normal.sample(rng)).collect(),
            b: vec![0.0; d_out],
            d_in,
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .chunks_exact(self.d_in)
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Debug, Clone)]
struct LayerNorm {
    gain: Vec<f64>,
    bias: Vec<f64>,
}

impl LayerNorm {
    fn new(d: usize) -> Self {
        Self {
            gain: vec![1.0; d],
            bias: vec![0.0; d],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        x.iter()
            .zip(self.gain.iter().zip(&self.bias))
            .map(|(v, (g, b))| (v - mean) * inv * g + b)
            .collect()
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    up: Linear,
    down: Linear,
}

/// Injection observed at one generated position.
#[derive(Debug, Clone, PartialEq)]
pub struct HookRecord {
    pub position: usize,
    /// Residual leaving the steered block before the addition.
    pub pre: Vec<f64>,
    /// The same residual after `+ beta * u`.
    pub post: Vec<f64>,
}

/// Incremental decoding state.
///
/// `resid[l][p]` is the residual leaving block `l` at position `p` as it
/// was handed to block `l + 1`, i.e. after any injection. Later positions
/// attend to keys and values computed from these states, which is what
/// makes an injection persist for the rest of the generation.
#[derive(Debug, Clone, Default)]
pub struct KvCache {
    pub keys: Vec<Vec<Vec<f64>>>,
    pub values: Vec<Vec<Vec<f64>>>,
    pub resid: Vec<Vec<Vec<f64>>>,
    pub hooks: Vec<HookRecord>,
}

impl KvCache {
    fn new(n_layers: usize) -> Self {
        Self {
            keys: vec![Vec::new(); n_layers],
            values: vec![Vec::new(); n_layers],
            resid: vec![Vec::new(); n_layers],
            hooks: Vec::new(),
        }
    }

    /// Positions held.
    pub fn len(&self) -> usize {
        self.keys.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop every position at or after `len`.
    pub fn truncate(&mut self, len: usize) {
        for l in 0..self.keys.len() {
            self.keys[l].truncate(len);
            self.values[l].truncate(len);
            self.resid[l].truncate(len);
        }
        self.hooks.retain(|h| h.position < len);
    }
}

#[derive(Debug, Clone)]
pub struct ToyTransformer {
    cfg: ToyConfig,
    tok_emb: Vec<f64>,
    pos_emb: Vec<f64>,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    unembed: Linear,
}

/// Encode text with the toy codec.
pub fn encode_text(text: &str) -> Vec<usize> {
    let mut out = Vec::with_capacity(text.len());
    let mut buf = [0u8; 4];
    for c in text.chars() {
        let cp = c as u32;
        if cp <= 0xff {
            out.push(cp as usize);
        } else {
            out.extend(c.encode_utf8(&mut buf).bytes().map(usize::from));
        }
    }
    out
}

/// Decode one non-end token to its text piece.
pub fn token_text(token: usize) -> String {
    debug_assert!(token < END_TOKEN);
    char::from(token as u8).to_string()
}

impl ToyTransformer {
    pub fn new(cfg: ToyConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng(cfg.seed);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let d = cfg.d_model;
        let draw = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| normal.sample(rng)).collect()
        };
        let tok_emb = draw(VOCAB * d, &mut rng);
        let pos_emb = draw(cfg.context * d, &mut rng);
        let blocks = (0..cfg.n_layers)
            .map(|_| Block {
                ln1: LayerNorm::new(d),
                q: Linear::random(&mut rng, &normal, d, d),
                k: Linear::random(&mut rng, &normal, d, d),
                v: Linear::random(&mut rng, &normal, d, d),
                o: Linear::random(&mut rng, &normal, d, d),
                ln2: LayerNorm::new(d),
                up: Linear::random(&mut rng, &normal, d, 4 * d),
                down: Linear::random(&mut rng, &normal, 4 * d, d),
            })
            .collect();
        let unembed = Linear::random(&mut rng, &normal, d, VOCAB);
        Ok(Self {
            cfg,
            tok_emb,
            pos_emb,
            blocks,
            ln_f: LayerNorm::new(d),
            unembed,
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.cfg
    }

    /// Tokens of the templated prompt after windowing, and of the prefix.
    pub fn encode_prompt(&self, prompt: &Prompt) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut tokens = encode_text(&render_plain_chat(&prompt.messages));
        let window = self.cfg.context - self.cfg.reserve;
        if tokens.len() > window {
            tokens.drain(..tokens.len() - window);
        }
        let prefix = encode_text(&prompt.assistant_prefix);
        if prefix.len() >= self.cfg.reserve {
            return Err(Error::InvalidArgument(format!(
                "assistant prefix of {} tokens leaves no room in a reserve of {}",
                prefix.len(),
                self.cfg.reserve
            )));
        }
        Ok((tokens, prefix))
    }

    /// Feed one token at the next position and return its logits.
    ///
    /// With `steering`, the residual leaving block `steering.layer` at this
    /// position gets `+ multiplier * vector` before later blocks run.
    pub fn step(&self, cache: &mut KvCache, token: usize, steering: Option<&SteeringSpec>) -> Vec<f64> {
        let d = self.cfg.d_model;
        let pos = cache.len();
        assert!(pos < self.cfg.context, "position {pos} beyond context");
        assert!(token < VOCAB, "token {token} outside vocabulary");
        let mut x: Vec<f64> = self.tok_emb[token * d..(token + 1) * d]
            .iter()
            .zip(&self.pos_emb[pos * d..(pos + 1) * d])
            .map(|(a, b)| a + b)
            .collect();

        let n_heads = self.cfg.n_heads;
        let dh = d / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for (l, block) in self.blocks.iter().enumerate() {
            let h = block.ln1.apply(&x);
            let q = block.q.apply(&h);
            cache.keys[l].push(block.k.apply(&h));
            cache.values[l].push(block.v.apply(&h));
            let keys = &cache.keys[l];
            let values = &cache.values[l];

            let mut attn = vec![0.0; d];
            let mut scores = vec![0.0; pos + 1];
            for head in 0..n_heads {
                let r = head * dh..(head + 1) * dh;
                let qh = &q[r.clone()];
                for (j, k) in keys.iter().enumerate() {
                    scores[j] = qh.iter().zip(&k[r.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - m).exp();
                    z += *s;
                }
                for (j, v) in values.iter().enumerate() {
                    let w = scores[j] / z;
                    for (a, vv) in attn[r.clone()].iter_mut().zip(&v[r.clone()]) {
                        *a += w * vv;
                    }
                }
            }
            for (xi, oi) in x.iter_mut().zip(block.o.apply(&attn)) {
                *xi += oi;
            }

            let h2 = block.ln2.apply(&x);
            let hidden: Vec<f64> = block.up.apply(&h2).into_iter().map(gelu).collect();
            for (xi, mi) in x.iter_mut().zip(block.down.apply(&hidden)) {
                *xi += mi;
            }

            if let Some(s) = steering.filter(|s| s.layer == l) {
                let pre = x.clone();
                for (xi, ui) in x.iter_mut().zip(&s.vector) {
                    *xi += s.multiplier * ui;
                }
                cache.hooks.push(HookRecord {
                    position: pos,
                    pre,
                    post: x.clone(),
                });
            }
            cache.resid[l].push(x.clone());
        }
        self.unembed.apply(&self.ln_f.apply(&x))
    }

    /// Run the prompt without steering; returns the cache and last logits.
    pub fn prefill(&self, tokens: &[usize]) -> Result<(KvCache, Vec<f64>)> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("empty prompt".into()));
        }
        let mut cache = KvCache::new(self.cfg.n_layers);
        let mut logits = Vec::new();
        for &t in tokens {
            logits = self.step(&mut cache, t, None);
        }
        Ok((cache, logits))
    }

    /// Teacher-forced pass: prompt unsteered, then `generated` tokens with
    /// steering. Returns the cache and the logits after each forced token.
    pub fn forced_pass(
        &self,
        prompt: &Prompt,
        generated: &[usize],
        steering: Option<&SteeringSpec>,
    ) -> Result<(KvCache, Vec<Vec<f64>>)> {
        if let Some(s) = steering {
            s.check(&self.info())?;
        }
        let (tokens, _) = self.encode_prompt(prompt)?;
        if tokens.len() + generated.len() > self.cfg.context {
            return Err(Error::InvalidArgument("forced sequence exceeds context".into()));
        }
        let (mut cache, _) = self.prefill(&tokens)?;
        let logits = generated
            .iter()
            .map(|&t| self.step(&mut cache, t, steering))
            .collect();
        Ok((cache, logits))
    }

    fn decode_from(
        &self,
        mut cache: KvCache,
        mut logits: Vec<f64>,
        prefix: &[usize],
        params: &SamplingParams,
        steering: Option<&SteeringSpec>,
    ) -> (GenerationResult, KvCache) {
        for &t in prefix {
            logits = self.step(&mut cache, t, steering);
        }
        let budget = params.max_new_tokens.min(self.cfg.context - cache.len());
        let mut rng = seed::rng(params.seed);
        let mut pieces: Vec<String> = Vec::new();
        let mut text = String::new();
        let finished = loop {
            if pieces.len() >= budget {
                break Finish::MaxTokens;
            }
            let tok = if params.temperature == 0.0 {
                argmax(&logits)
            } else {
                let probs = softmax_tempered(&logits, params.temperature).expect("positive temperature");
                sample_index(&probs, rng.random::<f64>())
            };
            if tok == END_TOKEN {
                break Finish::Stop;
            }
            let piece = token_text(tok);
            text.push_str(&piece);
            pieces.push(piece);
            if let StopCondition::Sentinel(s) = &params.stop {
                if !s.is_empty() && text.ends_with(s.as_str()) {
                    break Finish::Stop;
                }
            }
            if pieces.len() >= budget {
                break Finish::MaxTokens;
            }
            logits = self.step(&mut cache, tok, steering);
        };
        let result = GenerationResult {
            text,
            n_tokens: pieces.len(),
            finished,
            token_texts: Some(pieces),
        };
        (result, cache)
    }

    fn check_request(&self, params: &SamplingParams, steering: Option<&SteeringSpec>) -> Result<()> {
        params.validate()?;
        if let Some(s) = steering {
            s.check(&self.info())?;
        }
        Ok(())
    }

    /// Generate and also return the final decoding cache.
    pub fn generate_with_cache(
        &self,
        prompt: &Prompt,
        params: &SamplingParams,
        steering: Option<&SteeringSpec>,
    ) -> Result<(GenerationResult, KvCache)> {
        self.check_request(params, steering)?;
        let (tokens, prefix) = self.encode_prompt(prompt)?;
        let (cache, logits) = self.prefill(&tokens)?;
        Ok(self.decode_from(cache, logits, &prefix, params, steering))
    }

    /// Raw next-token logits after the prompt and (unsteered) prefix.
    pub fn next_token_logits(&self, prompt: &Prompt) -> Result<Vec<f64>> {
        let (tokens, prefix) = self.encode_prompt(prompt)?;
        let (mut cache, mut logits) = self.prefill(&tokens)?;
        for &t in &prefix {
            logits = self.step(&mut cache, t, None);
        }
        Ok(logits)
    }
}

impl Backend for ToyTransformer {
    fn id(&self) -> String {
        let c = &self.cfg;
        format!(
            "toy-L{}-d{}-h{}-ctx{}-seed{}",
            c.n_layers, c.d_model, c.n_heads, c.context, c.seed
        )
    }

    fn info(&self) -> BackendInfo {
        BackendInfo {
            n_layers: self.cfg.n_layers,
            hidden_dim: self.cfg.d_model,
        }
    }

    fn generate(
        &self,
        prompt: &Prompt,
        params: &SamplingParams,
        steering: Option<&SteeringSpec>,
    ) -> Result<GenerationResult> {
        self.generate_with_cache(prompt, params, steering).map(|(r, _)| r)
    }

    fn generate_many(
        &self,
        prompt: &Prompt,
        params: &SamplingParams,
        seeds: &[u64],
        steering: Option<&SteeringSpec>,
    ) -> Result<Vec<GenerationResult>> {
        use rayon::prelude::*;
        self.check_request(params, steering)?;
        let (tokens, prefix) = self.encode_prompt(prompt)?;
        let (cache, logits) = self.prefill(&tokens)?;
        Ok(seeds
            .par_iter()
            .map(|&s| {
                self.decode_from(cache.clone(), logits.clone(), &prefix, &params.with_seed(s), steering)
                    .0
            })
            .collect())
    }

    fn capture_prompt_activation(&self, prompt: &Prompt, layer: usize) -> Result<ActivationVector> {
        if layer >= self.cfg.n_layers {
            return Err(Error::LayerRange {
                layer,
                n_layers: self.cfg.n_layers,
            });
        }
        let (tokens, _) = self.encode_prompt(prompt)?;
        let (cache, _) = self.prefill(&tokens)?;
        let values = cache.resid[layer].last().cloned().expect("nonempty prompt");
        ActivationVector::new(values, layer, PositionTag::PromptLast)
    }

    fn next_token_distribution(&self, prompt: &Prompt, params: &SamplingParams) -> Result<Vec<f64>> {
        softmax_tempered(&self.next_token_logits(prompt)?, params.temperature)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::entropy_from_probs;
    use crate::prompting::ChatMessage;

    fn small() -> ToyTransformer {
        ToyTransformer::new(ToyConfig {
            n_layers: 4,
            d_model: 16,
            n_heads: 2,
            context: 96,
            reserve: 32,
            seed: 5,
        })
        .unwrap()
    }

    fn prompt(text: &str) -> Prompt {
        Prompt::new(vec![ChatMessage::user(text)])
    }

    #[test]
    fn codec_round_trips_generated_text() {
        let all: String = (0..=255u8).map(char::from).collect();
        assert_eq!(encode_text(&all), (0..256).collect::<Vec<_>>());
        assert_eq!(encode_text("é€"), vec![0xe9, 0xe2, 0x82, 0xac]);
    }

    #[test]
    fn config_validation() {
        assert!(ToyConfig::default().validate().is_ok());
        let bad = ToyConfig {
            d_model: 10,
            n_heads: 4,
            ..ToyConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ToyConfig {
            reserve: 512,
            ..ToyConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic_and_pieces_concatenate() {
        let m = small();
        let p = prompt("hello");
        let params = SamplingParams::new(1.0, 20, 3);
        let a = m.generate(&p, &params, None).unwrap();
        let b = m.generate(&p, &params, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.token_texts.as_ref().unwrap().concat(), a.text);
        assert_eq!(a.n_tokens, a.token_texts.as_ref().unwrap().len());
    }

    #[test]
    fn generate_many_matches_generate() {
        let m = small();
        let p = prompt("abc");
        let params = SamplingParams::new(1.0, 12, 0);
        let seeds = [1, 2, 3];
        let many = m.generate_many(&p, &params, &seeds, None).unwrap();
        for (s, r) in seeds.iter().zip(&many) {
            assert_eq!(&m.generate(&p, &params.with_seed(*s), None).unwrap(), r);
        }
    }

    #[test]
    fn greedy_ignores_seed() {
        let m = small();
        let p = prompt("abc");
        let a = m.generate(&p, &SamplingParams::new(0.0, 10, 1), None).unwrap();
        let b = m.generate(&p, &SamplingParams::new(0.0, 10, 2), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sentinel_stops_generation() {
        let m = small();
        let p = prompt("abc");
        let free = m.generate(&p, &SamplingParams::new(0.0, 10, 1), None).unwrap();
        let first = free.token_texts.unwrap()[0].clone();
        let mut params = SamplingParams::new(0.0, 10, 1);
        params.stop = StopCondition::Sentinel(first.clone());
        let r = m.generate(&p, &params, None).unwrap();
        assert_eq!(r.text, first);
        assert_eq!(r.finished, Finish::Stop);
    }

    #[test]
    fn capture_is_deterministic_and_layer_specific() {
        let m = small();
        let p = prompt("the quick brown fox");
        let a = m.capture_prompt_activation(&p, 1).unwrap();
        assert_eq!(a, m.capture_prompt_activation(&p, 1).unwrap());
        assert_eq!(a.dim(), 16);
        let b = m.capture_prompt_activation(&p, 3).unwrap();
        let cos = crate::numeric::dot(&a.values, &b.values)
            / (crate::numeric::l2_norm(&a.values) * crate::numeric::l2_norm(&b.values));
        assert!(cos < 1.0 - 1e-9, "cos = {cos}");
        assert!(matches!(
            m.capture_prompt_activation(&p, 4),
            Err(Error::LayerRange { layer: 4, n_layers: 4 })
        ));
    }

    #[test]
    fn long_prompts_are_windowed() {
        let m = small();
        let long = "x".repeat(1000);
        let (tokens, _) = m.encode_prompt(&prompt(&long)).unwrap();
        assert_eq!(tokens.len(), 64);
        let r = m.generate(&prompt(&long), &SamplingParams::new(1.0, 100, 0), None).unwrap();
        assert!(r.n_tokens <= 32);
    }

    #[test]
    fn next_token_distribution_tempering() {
        let m = small();
        let p = prompt("abc");
        let lo = m.next_token_distribution(&p, &SamplingParams::new(0.5, 1, 0)).unwrap();
        let hi = m.next_token_distribution(&p, &SamplingParams::new(2.0, 1, 0)).unwrap();
        assert_eq!(lo.len(), VOCAB);
        assert!((lo.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(entropy_from_probs(&hi) > entropy_from_probs(&lo));
        assert!(m.next_token_distribution(&p, &SamplingParams::new(0.0, 1, 0)).is_err());
    }

    #[test]
    fn zero_steering_is_a_no_op() {
        let m = small();
        let p = prompt("steer me");
        let params = SamplingParams::new(1.0, 16, 11);
        let base = m.generate(&p, &params, None).unwrap();
        let u: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let beta0 = SteeringSpec::new(2, 0.0, u);
        assert_eq!(m.generate(&p, &params, Some(&beta0)).unwrap(), base);
        let u0 = SteeringSpec::new(2, 2.0, vec![0.0; 16]);
        assert_eq!(m.generate(&p, &params, Some(&u0)).unwrap(), base);
    }

    #[test]
    fn injection_adds_delta_and_persists() {
        let m = small();
        let p = prompt("persist");
        let u: Vec<f64> = (0..16).map(|i| (i as f64).cos()).collect();
        let s = SteeringSpec::new(1, 3.0, u);
        let params = SamplingParams::new(1.0, 12, 4);
        let (res, cache) = m.generate_with_cache(&p, &params, Some(&s)).unwrap();
        let n_prompt = m.encode_prompt(&p).unwrap().0.len();
        // Every fed generated token was hooked, prompt positions never.
        assert!(res.n_tokens >= 2);
        assert_eq!(cache.hooks.len(), cache.len() - n_prompt);
        for h in &cache.hooks {
            assert!(h.position >= n_prompt);
            for ((pre, post), u) in h.pre.iter().zip(&h.post).zip(&s.vector) {
                assert!(((post - pre) - 3.0 * u).abs() < 1e-12);
            }
            assert_eq!(cache.resid[1][h.position], h.post);
        }
        // Replaying a later token from a truncated snapshot reuses the
        // modified states of earlier positions and reproduces its logits.
        let tokens: Vec<usize> = encode_text(&res.text);
        let (full, logits) = m.forced_pass(&p, &tokens, Some(&s)).unwrap();
        for pos in n_prompt..cache.len() {
            assert_eq!(cache.resid[1][pos], full.resid[1][pos]);
        }
        let k = n_prompt + 1;
        let mut snap = full.clone();
        snap.truncate(k);
        assert_eq!(snap.resid[1][n_prompt], full.resid[1][n_prompt]);
        let replay = m.step(&mut snap, tokens[1], Some(&s));
        assert_eq!(replay, logits[1]);
    }
}
