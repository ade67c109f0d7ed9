//! Experiment configuration: dataset, both networks, loss and schedule.

use std::path::Path;

use df3d_core::dataset::DatasetConfig;
use df3d_core::metrics::MetricConfig;
use df3d_models::{LRNetConfig, LossWeights, SRNetConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

/// Per-phase optimization settings. Index 0, 1, 2 is phase 1, 2, 3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseSchedule {
    pub epochs: [usize; 3],
    pub learning_rates: [f64; 3],
    pub batch_sizes: [usize; 3],
    /// Fraction of a phase's optimizer steps spent in linear warmup.
    pub warmup_fraction: f64,
    pub plateau_factor: f64,
    pub plateau_patience: u32,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    /// Fixed optimizer-step budget replacing the epoch count when set.
    pub step_budgets: [Option<usize>; 3],
    /// Validate every this many steps instead of once per epoch.
    pub eval_intervals: [Option<usize>; 3],
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        Self {
            epochs: [40, 60, 20],
            learning_rates: [2e-4, 2e-4, 1e-5],
            batch_sizes: [32, 4, 4],
            warmup_fraction: 0.05,
            plateau_factor: 0.5,
            plateau_patience: 3,
            weight_decay: 1e-2,
            clip_norm: Some(1.0),
            step_budgets: [None; 3],
            eval_intervals: [None; 3],
        }
    }
}

impl PhaseSchedule {
    pub fn validate(&self) -> Result<()> {
        let positive = self.epochs.iter().all(|&e| e > 0)
            && self.batch_sizes.iter().all(|&b| b > 0)
            && self.learning_rates.iter().all(|&r| r > 0.0)
            && self.step_budgets.iter().flatten().all(|&s| s > 0)
            && self.eval_intervals.iter().flatten().all(|&s| s > 0);
        if !positive {
            return Err(TrainError::Config(
                "epochs, batch sizes, rates, budgets and intervals must be positive".into(),
            ));
        }
        if self.learning_rates[2] >= self.learning_rates[1] {
            return Err(TrainError::Config(
                "phase-3 learning rate must be below phase 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction)
            || !(0.0..1.0).contains(&self.plateau_factor)
            || self.plateau_factor == 0.0
        {
            return Err(TrainError::Config(
                "warmup fraction and plateau factor must lie in [0, 1)".into(),
            ));
        }
        if self.weight_decay < 0.0 {
            return Err(TrainError::Config(
                "weight decay must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub lr_net: LRNetConfig,
    pub sr_net: SRNetConfig,
    pub schedule: PhaseSchedule,
    pub loss: LossWeights,
    pub extractor_seed: u64,
    pub metrics: MetricConfig,
    /// Seeds initialization, batch order and dropout.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            lr_net: LRNetConfig::default(),
            sr_net: SRNetConfig::default(),
            schedule: PhaseSchedule::default(),
            loss: LossWeights::default(),
            extractor_seed: 17,
            metrics: MetricConfig::default(),
            seed: 7,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| TrainError::io(path, e))?;
        let mut cfg: Self = serde_json::from_slice(&bytes)?;
        cfg.sync();
        Ok(cfg)
    }

    /// Copies the dataset resolutions into the network configs.
    pub fn sync(&mut self) {
        self.lr_net.delta = self.dataset.delta;
        self.lr_net.delta_l = self.dataset.delta_l;
        if let Ok(u) = self.dataset.upsample_blocks() {
            self.sr_net.upsample_blocks = u as usize;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.lr_net.validate()?;
        self.sr_net.validate()?;
        self.sr_net
            .check_ratio(self.dataset.delta, self.dataset.delta_l)?;
        self.lr_net.check_dims(self.dataset.coarse_grid()?.dims)?;
        if self.lr_net.delta != self.dataset.delta || self.lr_net.delta_l != self.dataset.delta_l {
            return Err(TrainError::Config(
                "LR-Net resolutions differ from the dataset".into(),
            ));
        }
        self.loss.validate()?;
        self.schedule.validate()
    }

    /// Same experiment with the RadioUNet3D stage-1 network.
    pub fn with_radiounet3d(&self) -> Self {
        Self {
            lr_net: self.lr_net.radiounet3d(),
            ..self.clone()
        }
    }
}
