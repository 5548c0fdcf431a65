use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_EPOCHS: usize = 200;
pub const DEFAULT_WORKING_SIZE: usize = 256;
pub const DEFAULT_LR_INITIAL: f64 = 1e-4;
pub const DEFAULT_LR_REDUCED: f64 = 1e-5;
pub const DEFAULT_LR_SWITCH_EPOCH: usize = 50;

/// Quantity maximised when choosing the best checkpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    /// Target-class IoU over the pooled validation split.
    #[default]
    ValidationIou,
    ValidationF1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub working_size: usize,
    pub lr_initial: f64,
    pub lr_reduced: f64,
    /// Last epoch trained at `lr_initial`.
    pub lr_switch_epoch: usize,
    pub seed: u64,
    pub target_class: usize,
    pub dice_smoothing: f64,
    pub selection_metric: SelectionMetric,
    /// Write a checkpoint directory for every epoch, not only `best`.
    pub save_every_epoch: bool,
}

/// 16 for small inputs, 8 otherwise.
pub fn default_batch_size(working_size: usize) -> usize {
    if working_size <= 64 {
        16
    } else {
        8
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            batch_size: default_batch_size(DEFAULT_WORKING_SIZE),
            working_size: DEFAULT_WORKING_SIZE,
            lr_initial: DEFAULT_LR_INITIAL,
            lr_reduced: DEFAULT_LR_REDUCED,
            lr_switch_epoch: DEFAULT_LR_SWITCH_EPOCH,
            seed: 0,
            target_class: 1,
            dice_smoothing: 1.0,
            selection_metric: SelectionMetric::ValidationIou,
            save_every_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.lr_switch_epoch > self.epochs {
            return Err(Error::Config(format!(
                "lr_switch_epoch {} exceeds epochs {}",
                self.lr_switch_epoch, self.epochs
            )));
        }
        for (name, lr) in [("lr_initial", self.lr_initial), ("lr_reduced", self.lr_reduced)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.working_size == 0 {
            return Err(Error::Config("working_size must be positive".into()));
        }
        if !(self.dice_smoothing >= 0.0 && self.dice_smoothing.is_finite()) {
            return Err(Error::Config(format!(
                "dice_smoothing must be non-negative, got {}",
                self.dice_smoothing
            )));
        }
        Ok(())
    }
}

/// Step schedule over 1-based epochs: `lr_initial` through
/// `lr_switch_epoch`, `lr_reduced` afterwards.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch == 0 || epoch > cfg.epochs {
        return Err(Error::InvalidInput(format!(
            "epoch {epoch} outside 1..={}",
            cfg.epochs
        )));
    }
    Ok(if epoch <= cfg.lr_switch_epoch {
        cfg.lr_initial
    } else {
        cfg.lr_reduced
    })
}

/// Model keys of a run configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: String,
    pub base_width: usize,
    pub depth: usize,
    pub in_channels: usize,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: "unet".into(),
            base_width: 16,
            depth: 4,
            in_channels: 3,
            classes: 2,
        }
    }
}

/// Flat run-configuration file; every key optional.
///
/// ```toml
/// arch = "unet"
/// base_width = 8
/// depth = 4
/// epochs = 40
/// batch_size = 16
/// working_size = 64
/// lr_initial = 1e-4
/// lr_reduced = 1e-5
/// lr_switch_epoch = 50
/// seed = 7
/// target_class = 1
/// dice_smoothing = 1.0
/// selection_metric = "validation_iou"
/// save_every_epoch = true
/// augment = ["horizontal_flip p=0.5", "gaussian_noise p=0.3 std=0.02"]
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub arch: Option<String>,
    pub base_width: Option<usize>,
    pub depth: Option<usize>,
    pub in_channels: Option<usize>,
    pub classes: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub working_size: Option<usize>,
    pub lr_initial: Option<f64>,
    pub lr_reduced: Option<f64>,
    pub lr_switch_epoch: Option<usize>,
    pub seed: Option<u64>,
    pub target_class: Option<usize>,
    pub dice_smoothing: Option<f64>,
    pub selection_metric: Option<SelectionMetric>,
    pub save_every_epoch: Option<bool>,
    pub augment: Option<Vec<String>>,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Keys set in `over` replace those in `self`.
    pub fn overridden_by(mut self, over: RunConfigFile) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f; } )* };
        }
        take!(
            arch, base_width, depth, in_channels, classes, epochs, batch_size, working_size,
            lr_initial, lr_reduced, lr_switch_epoch, seed, target_class, dice_smoothing,
            selection_metric, save_every_epoch, augment
        );
        self
    }

    /// Fill defaults. An unset `lr_switch_epoch` is capped at `epochs`,
    /// which leaves the schedule unchanged for short runs.
    pub fn resolve(&self) -> Result<(ModelConfig, TrainConfig, Vec<String>)> {
        let dm = ModelConfig::default();
        let model = ModelConfig {
            arch: self.arch.clone().unwrap_or(dm.arch),
            base_width: self.base_width.unwrap_or(dm.base_width),
            depth: self.depth.unwrap_or(dm.depth),
            in_channels: self.in_channels.unwrap_or(dm.in_channels),
            classes: self.classes.unwrap_or(dm.classes),
        };
        let d = TrainConfig::default();
        let epochs = self.epochs.unwrap_or(d.epochs);
        let working_size = self.working_size.unwrap_or(d.working_size);
        let train = TrainConfig {
            epochs,
            batch_size: self
                .batch_size
                .unwrap_or_else(|| default_batch_size(working_size)),
            working_size,
            lr_initial: self.lr_initial.unwrap_or(d.lr_initial),
            lr_reduced: self.lr_reduced.unwrap_or(d.lr_reduced),
            lr_switch_epoch: self
                .lr_switch_epoch
                .unwrap_or(d.lr_switch_epoch.min(epochs)),
            seed: self.seed.unwrap_or(d.seed),
            target_class: self.target_class.unwrap_or(d.target_class),
            dice_smoothing: self.dice_smoothing.unwrap_or(d.dice_smoothing),
            selection_metric: self.selection_metric.unwrap_or(d.selection_metric),
            save_every_epoch: self.save_every_epoch.unwrap_or(d.save_every_epoch),
        };
        train.validate()?;
        Ok((model, train, self.augment.clone().unwrap_or_default()))
    }
}
