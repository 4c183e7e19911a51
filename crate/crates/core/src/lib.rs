// SPDX-License-Identifier: MIT OR Apache-2.0

//! Entropy-driven activation steering for language-model agents playing
//! multi-armed bandits.
//!
//! The pipeline: run an agent against a [`bandit::BanditEnv`], logging
//! the action entropy and a hidden activation at every step
//! ([`runner`]); turn the log into a steering vector
//! ([`steering::compute_steering_vector`]); add a multiple of it to the
//! residual stream while generating ([`backend`]); and measure the effect
//! ([`runner::eval_steering`], [`analysis`]).

pub mod analysis;
pub mod backend;
pub mod bandit;
pub mod error;
pub mod numeric;
pub mod parser;
pub mod policy;
pub mod prompting;
pub mod runner;
pub mod seed;
pub mod steering;

pub use backend::{Backend, Prompt, SamplingParams, SteeringSpec};
pub use bandit::{BanditConfig, BanditEnv};
pub use error::{Error, Result};
pub use policy::ActionDistribution;
pub use prompting::{ScenarioKind, Transcript};
pub use steering::{compute_steering_vector, shuffle_features, ActivationDataset, SteeringVector};
