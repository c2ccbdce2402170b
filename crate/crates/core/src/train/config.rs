use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ModelConfig;
use crate::tensor::OptimizerConfig;

/// Learning rates searched per model/dataset.
pub const LR_GRID: [f64; 5] = [0.1, 0.05, 0.01, 0.005, 0.001];
/// Seeds averaged per learning rate.
pub const SEED_GRID: [u64; 5] = [0, 1, 2, 3, 4];

/// Dataset files for one run. `test` is optional; when present, the final
/// and best-checkpoint models are scored on it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// 0-based epochs at which the rate is divided by `lr_decay_factor`; the
    /// new rate first applies to that epoch.
    pub lr_milestones: Vec<usize>,
    pub lr_decay_factor: f64,
    pub seed: u64,
    pub data: DataPaths,
    /// Use only the first `n` training samples.
    pub train_limit: Option<usize>,
    pub val_limit: Option<usize>,
    pub test_limit: Option<usize>,
    /// Write measured wall-clock seconds to the metrics; when false the column
    /// holds 0 so identical runs give identical files.
    pub record_time: bool,
    /// Train even if a dataset fails its audit.
    pub allow_unaudited: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::resmixnet(2, 2),
            batch_size: 64,
            eval_batch_size: 128,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 200,
            lr_milestones: vec![100, 140],
            lr_decay_factor: 10.0,
            seed: 0,
            data: DataPaths::default(),
            train_limit: None,
            val_limit: None,
            test_limit: None,
            record_time: true,
            allow_unaudited: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("lr_milestones {:?} must be strictly increasing", self.lr_milestones));
        }
        if let Some(&m) = self.lr_milestones.last() {
            if m >= self.epochs {
                return bad(format!("lr milestone {m} is not below epochs {}", self.epochs));
            }
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return bad(format!("lr_decay_factor must be positive, got {}", self.lr_decay_factor));
        }
        self.optimizer(self.learning_rate).validate()
    }

    pub fn optimizer(&self, learning_rate: f64) -> OptimizerConfig {
        OptimizerConfig { learning_rate, momentum: self.momentum, weight_decay: self.weight_decay }
    }

    /// Base rate divided by `lr_decay_factor` once per milestone ≤ `epoch`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        lr_at_epoch(self.learning_rate, &self.lr_milestones, self.lr_decay_factor, epoch)
    }
}

pub fn lr_at_epoch(base: f64, milestones: &[usize], factor: f64, epoch: usize) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= epoch).count();
    base / factor.powi(passed as i32)
}
