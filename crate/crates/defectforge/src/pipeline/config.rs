//! One structured config file for the whole pipeline.
//!
//! Sections mirror the modules; every field has a default so a partial JSON
//! file (or none) works. CLI flags override file values, and the
//! `DEFECTFORGE_SERVICE_URL` environment variable overrides the endpoint.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::TrainSchedule;
use crate::genclient::{RetryPolicy, TemplateRegistry};
use crate::matchfilter::FilterParams;
use crate::rulegen::{params_hash, PerlinParams};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Config {
    pub images: ImagesConfig,
    pub rulegen: RulegenConfig,
    pub genclient: GenClientConfig,
    pub filter: FilterParams,
    pub detector: DetectorConfig,
    pub strategies: StrategiesConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ImagesConfig {
    pub width: u32,
    pub height: u32,
}

impl Default for ImagesConfig {
    fn default() -> Self {
        Self { width: 64, height: 64 }
    }
}

/// Relative weights for the engine mix plus per-engine knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RulegenConfig {
    pub perlin: PerlinParams,
    /// Per-sample blend opacity range.
    pub beta_range: (f64, f64),
    pub weights: EngineWeights,
    pub cutpaste_patch_frac: f64,
    pub gaussian_sigma: f64,
    pub poisson_tol: f64,
}

impl Default for RulegenConfig {
    fn default() -> Self {
        Self {
            perlin: PerlinParams::default(),
            beta_range: (0.2, 0.5),
            weights: EngineWeights::default(),
            cutpaste_patch_frac: 0.3,
            gaussian_sigma: 12.0,
            poisson_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineWeights {
    pub perlin: f64,
    pub cutpaste: f64,
    pub gaussian: f64,
    pub poisson: f64,
}

impl Default for EngineWeights {
    fn default() -> Self {
        Self { perlin: 0.55, cutpaste: 0.15, gaussian: 0.15, poisson: 0.15 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenClientConfig {
    /// Service URL, or `mock:<mode>` to run an in-process mock.
    pub endpoint: String,
    pub registry: TemplateRegistry,
    pub retry: RetryPolicy,
    /// Opaque guidance knobs forwarded to the service.
    pub guidance: serde_json::Value,
    /// Generation attempts budgeted per accepted sample.
    pub attempts_per_accept: u32,
    /// Concurrent in-flight requests.
    pub in_flight: usize,
    /// How many rejected candidates to keep on disk per decision class, for
    /// reporting.
    pub keep_rejected: usize,
}

impl Default for GenClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "mock:local-edit".to_string(),
            registry: TemplateRegistry::default(),
            retry: RetryPolicy::default(),
            guidance: serde_json::Value::Null,
            attempts_per_accept: 4,
            in_flight: 4,
            keep_rejected: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub patch: u32,
    pub stride: u32,
    pub hidden: Vec<usize>,
    pub pretrain: ScheduleConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            patch: 16,
            stride: 16,
            hidden: vec![128, 64, 128],
            pretrain: ScheduleConfig::default(),
        }
    }
}

impl DetectorConfig {
    pub fn layer_sizes(&self) -> Vec<usize> {
        let d = (self.patch * self.patch) as usize;
        let mut sizes = vec![d];
        sizes.extend(&self.hidden);
        sizes.push(d);
        sizes
    }

    pub fn pretrain_schedule(&self, seed: u64) -> TrainSchedule {
        TrainSchedule {
            stage: crate::detector::StageLabel::Pretrain,
            epochs: self.pretrain.epochs,
            batch_size: self.pretrain.batch_size,
            learning_rate: self.pretrain.learning_rate,
            lr_decay: self.pretrain.lr_decay,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { epochs: 16, batch_size: 32, learning_rate: 0.05, lr_decay: 0.95 }
    }
}

/// Toy benchmark scale: a large cheap pre-training set against a small
/// curated fine-tuning set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategiesConfig {
    pub pretrain_size: usize,
    pub finetune_size: usize,
    pub train_normals: usize,
    pub eval_normals: usize,
    pub eval_anomalies: usize,
}

impl Default for StrategiesConfig {
    fn default() -> Self {
        Self {
            pretrain_size: 2000,
            finetune_size: 60,
            train_normals: 200,
            eval_normals: 100,
            eval_anomalies: 100,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, super::PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| super::PipelineError::Io {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| super::PipelineError::BadConfig {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Loads the config if a path is given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, super::PipelineError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    /// Stable hash of the full configuration, recorded in every manifest.
    pub fn hash(&self) -> String {
        params_hash(self)
    }

    /// The endpoint after applying the environment override.
    pub fn effective_endpoint(&self, flag: Option<&str>) -> String {
        if let Ok(url) = std::env::var(crate::genclient::SERVICE_URL_ENV) {
            if !url.is_empty() {
                return url;
            }
        }
        flag.map(|s| s.to_string()).unwrap_or_else(|| self.genclient.endpoint.clone())
    }
}
