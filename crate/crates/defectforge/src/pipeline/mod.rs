//! Dataset manifests, the generate→filter→persist loop, the five training
//! strategies, the toy benchmark, and reporting.

pub mod config;
pub mod dataset;
pub mod manifest;
pub mod report;
pub mod strategy;
pub mod toybench;

pub use config::Config;
pub use dataset::{generate_gen_dataset, generate_rule_dataset, GenStats};
pub use manifest::{Manifest, ManifestEntry};
pub use report::emit_report;
pub use strategy::{run_full_experiment, run_strategy, Strategy, StrategyPlan, StrategyResult};
pub use toybench::{build_toy_benchmark, render_product, ProductFamily, ToyBenchmark};

use std::path::PathBuf;

use thiserror::Error;

/// Substream namespaces: every randomized stage draws from
/// `Rng::new(global_seed).substream(namespace).substream(item_id)`.
pub(crate) mod ns {
    pub const TRAIN_NORMALS: u64 = 0x01;
    pub const EVAL_NORMALS: u64 = 0x02;
    pub const EVAL_ANOM_SRC: u64 = 0x03;
    pub const EVAL_ANOM_EDIT: u64 = 0x04;
    pub const RULE_DATASET: u64 = 0x05;
    pub const GEN_DATASET: u64 = 0x06;
    pub const GEN_MOCK: u64 = 0x07;
    pub const MODEL_INIT: u64 = 0x08;
    pub const STRATEGY: u64 = 0x09;
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("i/o failure on {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("bad config {path}: {reason}")]
    BadConfig { path: PathBuf, reason: String },
    #[error("bad manifest {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },
    #[error("manifest {path} failed validation: {violations:?}")]
    InvalidManifest { path: PathBuf, violations: Vec<String> },
    #[error("{failed} of {total} samples failed: first failures {examples:?}")]
    EngineFailure { failed: usize, total: usize, examples: Vec<String> },
    #[error(
        "acceptance exhausted: {accepted}/{target} accepted after {attempts} attempts \
         (rate {rate:.3})"
    )]
    AcceptanceExhausted { accepted: usize, target: usize, attempts: usize, rate: f64 },
    #[error("dataset is empty: {0}")]
    EmptyDataset(String),
    #[error(transparent)]
    Image(#[from] crate::imgcore::ImageError),
    #[error(transparent)]
    Rulegen(#[from] crate::rulegen::RulegenError),
    #[error(transparent)]
    Gen(#[from] crate::genclient::GenError),
    #[error(transparent)]
    Filter(#[from] crate::matchfilter::FilterError),
    #[error(transparent)]
    Detector(#[from] crate::detector::DetectorError),
}

impl PipelineError {
    /// Stable machine-readable error kind for the CLI's JSON output.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Io { .. } => "io_failure",
            PipelineError::BadConfig { .. } => "bad_config",
            PipelineError::BadManifest { .. } => "bad_manifest",
            PipelineError::InvalidManifest { .. } => "invalid_manifest",
            PipelineError::EngineFailure { .. } => "engine_failure",
            PipelineError::AcceptanceExhausted { .. } => "acceptance_exhausted",
            PipelineError::EmptyDataset(_) => "empty_dataset",
            PipelineError::Image(_) => "image_error",
            PipelineError::Rulegen(_) => "rulegen_error",
            PipelineError::Gen(_) => "genclient_error",
            PipelineError::Filter(_) => "filter_error",
            PipelineError::Detector(_) => "detector_error",
        }
    }
}
