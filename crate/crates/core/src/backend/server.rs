// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reference HTTP server for the wire protocol.
//!
//! Wraps any in-process [`Backend`]. Requests are independent: each one
//! runs on the blocking pool with its own sampling state.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::oneshot;

use super::wire::{
    ActivationRequest, ActivationResponse, ErrorBody, GenerateRequest, GenerateResponse, InfoResponse,
    ACTIVATION_PATH, CODE_BAD_REQUEST, CODE_INTERNAL, GENERATE_PATH, INFO_PATH,
};
use super::{Backend, Prompt, SamplingParams, StopCondition};
use crate::error::{Error, Result};

type Shared = Arc<dyn Backend>;

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    match serde_json::to_string(body) {
        Ok(s) => (status, [(header::CONTENT_TYPE, "application/json")], s).into_response(),
        Err(e) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            [(header::CONTENT_TYPE, "application/json")],
            serde_json::to_string(&ErrorBody::new(CODE_INTERNAL, e.to_string())).unwrap_or_default(),
        )
            .into_response(),
    }
}

fn error_response(e: &Error) -> Response {
    let (status, body) = ErrorBody::from_error(e);
    json_response(
        StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
        &body,
    )
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> std::result::Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| {
        json_response(
            StatusCode::BAD_REQUEST,
            &ErrorBody::new(CODE_BAD_REQUEST, e.to_string()),
        )
    })
}

async fn run_blocking<T, F>(f: F) -> Response
where
    T: Serialize + Send + 'static,
    F: FnOnce() -> Result<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(v)) => json_response(StatusCode::OK, &v),
        Ok(Err(e)) => error_response(&e),
        Err(e) => json_response(
            StatusCode::INTERNAL_SERVER_ERROR,
            &ErrorBody::new(CODE_INTERNAL, e.to_string()),
        ),
    }
}

async fn generate(State(backend): State<Shared>, body: Bytes) -> Response {
    let req: GenerateRequest = match parse(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    run_blocking(move || {
        let prompt = Prompt {
            messages: req.messages,
            assistant_prefix: req.assistant_prefix.unwrap_or_default(),
        };
        let params = SamplingParams {
            temperature: req.temperature,
            max_new_tokens: req.max_new_tokens,
            seed: req.seed,
            stop: req.stop.map_or(StopCondition::EndToken, StopCondition::Sentinel),
        };
        let result = backend.generate(&prompt, &params, req.steering.as_ref())?;
        Ok(GenerateResponse::from(result))
    })
    .await
}

async fn activation(State(backend): State<Shared>, body: Bytes) -> Response {
    let req: ActivationRequest = match parse(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    run_blocking(move || {
        let a = backend.capture_prompt_activation(&Prompt::new(req.messages), req.layer)?;
        Ok(ActivationResponse {
            dim: a.dim(),
            vector: a.values,
        })
    })
    .await
}

async fn info(State(backend): State<Shared>) -> Response {
    let i = backend.info();
    json_response(
        StatusCode::OK,
        &InfoResponse {
            id: backend.id(),
            n_layers: i.n_layers,
            hidden_dim: i.hidden_dim,
        },
    )
}

pub fn router(backend: Shared) -> Router {
    Router::new()
        .route(GENERATE_PATH, post(generate))
        .route(ACTIVATION_PATH, post(activation))
        .route(INFO_PATH, get(info))
        .with_state(backend)
}

/// A server running on a background thread; shuts down on drop.
pub struct ReferenceServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ReferenceServer {
    /// Bind `addr` (port 0 picks a free port) and start serving.
    pub fn spawn(backend: Shared, addr: SocketAddr) -> Result<Self> {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()?;
        let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(backend);
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let shutdown = async {
                    let _ = rx.await;
                };
                if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
                    tracing::error!("reference server stopped: {e}");
                }
            });
        });
        tracing::info!(%addr, "reference server listening");
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Block until the server exits (it only does so after [`Self::stop`]
    /// from another handle, so this is for foreground use).
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ReferenceServer {
    fn drop(&mut self) {
        self.stop();
    }
}
