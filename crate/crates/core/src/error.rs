// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by the harness.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// A configuration value violates its invariant.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A function argument is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("arm {arm} out of range for a {n_arms}-armed bandit")]
    ArmOutOfRange { arm: usize, n_arms: usize },

    #[error("horizon of {horizon} steps exceeded")]
    HorizonExceeded { horizon: u32 },

    #[error("completion is not valid UTF-8")]
    InvalidUtf8,

    /// Steering or activation dimension does not match the backend.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("layer {layer} out of range for a {n_layers}-layer backend")]
    LayerRange { layer: usize, n_layers: usize },

    /// The backend cannot serve this request kind.
    #[error("unsupported by backend: {0}")]
    Unsupported(String),

    /// Network or HTTP failure talking to a remote backend.
    #[error("transport failure: {0}")]
    Transport(String),

    /// Structured error returned by a remote backend.
    #[error("remote error {code}: {message}")]
    Remote { code: String, message: String },

    /// Every sampled completion failed to parse.
    #[error("no completion produced a valid action")]
    AllInvalid,

    #[error("all entropies in the dataset are zero")]
    AllZeroEntropy,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("bad magic bytes in {what} file")]
    BadMagic { what: &'static str },

    #[error("unsupported {what} file version {found} (expected {expected})")]
    VersionMismatch {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("truncated or malformed {what} file: {detail}")]
    Truncated { what: &'static str, detail: String },

    /// Action-sum metrics only make sense for two-armed bandits.
    #[error("metric requires a two-armed bandit, got {n_arms} arms")]
    NonBinaryActions { n_arms: usize },

    #[error("corpus `{0}` is empty after filtering")]
    EmptyCorpus(&'static str),

    #[error("run log {path}: {detail}")]
    RunLog { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Convenience alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;
