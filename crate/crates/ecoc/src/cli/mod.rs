//! Operator surface: configuration, checkpoints, metrics, and the
//! build-codebook / train / eval / sample / plot commands.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod plot;
pub mod run;

pub use checkpoint::Checkpoint;
pub use config::{RunConfig, OUT_ROOT_ENV};
pub use metrics::{load_metrics, MetricsRecord};
pub use run::{
    run_build_codebook, run_eval, run_sample, run_train, DecodeMode, TrainOutcome,
};
