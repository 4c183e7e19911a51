// SPDX-License-Identifier: MIT OR Apache-2.0

//! HTTP client backend for the [`super::wire`] protocol.

use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{
    ActivationRequest, ActivationResponse, ErrorBody, GenerateRequest, GenerateResponse, InfoResponse,
    ACTIVATION_PATH, GENERATE_PATH, INFO_PATH,
};
use super::{
    ActivationVector, Backend, BackendInfo, GenerationResult, PositionTag, Prompt, SamplingParams,
    SteeringSpec, StopCondition,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    base: String,
    client: Client,
    info: BackendInfo,
    remote_id: String,
}

fn transport(e: impl std::fmt::Display) -> Error {
    Error::Transport(e.to_string())
}

impl RemoteBackend {
    /// Connect to `endpoint` (e.g. `http://127.0.0.1:8080`) and fetch its shape.
    pub fn connect(endpoint: &str) -> Result<Self> {
        Self::connect_with_timeout(endpoint, Duration::from_secs(600))
    }

    pub fn connect_with_timeout(endpoint: &str, timeout: Duration) -> Result<Self> {
        let client = Client::builder().timeout(timeout).build().map_err(transport)?;
        let base = endpoint.trim_end_matches('/').to_owned();
        let resp = client
            .get(format!("{base}{INFO_PATH}"))
            .send()
            .map_err(transport)?;
        let info: InfoResponse = Self::decode(resp)?;
        Ok(Self {
            base,
            client,
            info: BackendInfo {
                n_layers: info.n_layers,
                hidden_dim: info.hidden_dim,
            },
            remote_id: info.id,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn decode<T: DeserializeOwned>(resp: reqwest::blocking::Response) -> Result<T> {
        let status = resp.status();
        let bytes = resp.bytes().map_err(transport)?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| Error::Transport(format!("bad response body: {e}")));
        }
        match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(body) => Err(Error::Remote {
                code: body.error.code,
                message: body.error.message,
            }),
            Err(_) => Err(Error::Transport(format!(
                "HTTP {status}: {}",
                String::from_utf8_lossy(&bytes)
            ))),
        }
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, req: &Req) -> Result<Resp> {
        let body = serde_json::to_vec(req)?;
        let resp = self
            .client
            .post(format!("{}{path}", self.base))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body)
            .send()
            .map_err(transport)?;
        Self::decode(resp)
    }
}

impl Backend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}:{}", self.base, self.remote_id)
    }

    fn info(&self) -> BackendInfo {
        self.info
    }

    fn generate(
        &self,
        prompt: &Prompt,
        params: &SamplingParams,
        steering: Option<&SteeringSpec>,
    ) -> Result<GenerationResult> {
        params.validate()?;
        let req = GenerateRequest {
            messages: prompt.messages.clone(),
            temperature: params.temperature,
            max_new_tokens: params.max_new_tokens,
            seed: params.seed,
            steering: steering.cloned(),
            assistant_prefix: (!prompt.assistant_prefix.is_empty()).then(|| prompt.assistant_prefix.clone()),
            stop: match &params.stop {
                StopCondition::EndToken => None,
                StopCondition::Sentinel(s) => Some(s.clone()),
            },
        };
        let resp: GenerateResponse = self.post(GENERATE_PATH, &req)?;
        Ok(resp.into())
    }

    fn capture_prompt_activation(&self, prompt: &Prompt, layer: usize) -> Result<ActivationVector> {
        let req = ActivationRequest {
            messages: prompt.messages.clone(),
            layer,
        };
        let resp: ActivationResponse = self.post(ACTIVATION_PATH, &req)?;
        if resp.vector.len() != resp.dim {
            return Err(Error::Transport(format!(
                "activation of length {} declared dim {}",
                resp.vector.len(),
                resp.dim
            )));
        }
        ActivationVector::new(resp.vector, layer, PositionTag::PromptLast)
    }

    fn next_token_distribution(&self, _prompt: &Prompt, _params: &SamplingParams) -> Result<Vec<f64>> {
        Err(Error::Unsupported(
            "the wire protocol does not expose next-token distributions".into(),
        ))
    }
}
