// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSON wire protocol between [`super::remote::RemoteBackend`] and an
//! activation-capable inference server.
//!
//! ```text
//! POST /v1/generate
//!   {messages:[{role,text}], temperature, max_new_tokens, seed,
//!    steering:{layer, multiplier, vector:[..]} | null}
//!   -> {text, n_tokens, finished:"stop"|"max_tokens"}
//! POST /v1/activation {messages:[..], layer} -> {vector:[..], dim}
//! GET  /v1/info -> {id, n_layers, hidden_dim}
//! errors: HTTP 400 {error:{code:"DIM_MISMATCH"|"LAYER_RANGE"|"BAD_REQUEST", message}}
//! ```
//!
//! Optional request fields `assistant_prefix` and `stop`, and the optional
//! response field `token_texts`, are omitted when unused; servers that do
//! not know them can ignore them.

use serde::{Deserialize, Serialize};

use super::{Finish, GenerationResult, SteeringSpec};
use crate::error::Error;
use crate::prompting::ChatMessage;

pub const GENERATE_PATH: &str = "/v1/generate";
pub const ACTIVATION_PATH: &str = "/v1/activation";
pub const INFO_PATH: &str = "/v1/info";

pub const CODE_DIM_MISMATCH: &str = "DIM_MISMATCH";
pub const CODE_LAYER_RANGE: &str = "LAYER_RANGE";
pub const CODE_BAD_REQUEST: &str = "BAD_REQUEST";
pub const CODE_INTERNAL: &str = "INTERNAL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
    pub steering: Option<SteeringSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assistant_prefix: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
    pub n_tokens: usize,
    pub finished: Finish,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_texts: Option<Vec<String>>,
}

impl From<GenerationResult> for GenerateResponse {
    fn from(r: GenerationResult) -> Self {
        Self {
            text: r.text,
            n_tokens: r.n_tokens,
            finished: r.finished,
            token_texts: r.token_texts,
        }
    }
}

impl From<GenerateResponse> for GenerationResult {
    fn from(r: GenerateResponse) -> Self {
        Self {
            text: r.text,
            n_tokens: r.n_tokens,
            finished: r.finished,
            token_texts: r.token_texts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationRequest {
    pub messages: Vec<ChatMessage>,
    pub layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationResponse {
    pub vector: Vec<f64>,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfoResponse {
    pub id: String,
    pub n_layers: usize,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

impl ErrorBody {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            error: ErrorDetail {
                code: code.to_owned(),
                message: message.into(),
            },
        }
    }

    /// Wire code and HTTP status for a backend error.
    pub fn from_error(e: &Error) -> (u16, Self) {
        let code = match e {
            Error::DimMismatch { .. } => CODE_DIM_MISMATCH,
            Error::LayerRange { .. } => CODE_LAYER_RANGE,
            Error::InvalidArgument(_) | Error::Unsupported(_) | Error::Json(_) => CODE_BAD_REQUEST,
            _ => return (500, Self::new(CODE_INTERNAL, e.to_string())),
        };
        (400, Self::new(code, e.to_string()))
    }
}
