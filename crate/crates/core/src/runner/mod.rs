// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment orchestration: interactions, dataset collection, evaluation
//! and sweeps, with everything persisted for later analysis.

pub mod config;
pub mod eval;
pub mod interaction;
pub mod runlog;
pub mod sidecar;

pub use config::{BackendKind, ExperimentConfig, SweepGrid};
pub use eval::{
    action_probability_trace, eval_steering, evaluate_prompts, make_eval_prompt_set, read_prompts,
    sample_eval_prompts, sweep_layers, temperature_sweep, write_prompts, EntropyRow, TemperatureResult,
    TracePoint,
};
pub use interaction::{
    collect_dataset, dataset_from_dir, dataset_from_runs, recapture_dataset, recapture_runs, run_interaction, run_many,
    write_interaction, Interaction, InteractionOptions,
};
pub use runlog::{RunLog, StepRecord, Termination};
pub use sidecar::Sidecar;
