//! `key = value` run configuration.

use std::path::Path;

use super::PersistError;
use crate::codec::QuadtreeParams;
use crate::eval::TileParams;
use crate::train::{AdamParams, LrSchedule, TrainOptions};

/// Every tunable of the pipeline. Missing keys keep their defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// QP of the base model.
    pub base_qp: u8,
    /// QPs of the RD curves and per-QP models.
    pub qps: Vec<u8>,
    pub var_threshold: f64,
    pub min_block: usize,
    pub max_block: usize,
    pub patch_stride: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_gamma: f64,
    pub lr_interval: usize,
    pub total_epochs: usize,
    /// Epochs actually run for the base model.
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub tile_size: usize,
    pub tile_overlap: usize,
    pub stem_channels: usize,
    pub block_channels: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            base_qp: 37,
            qps: vec![22, 27, 32, 37],
            var_threshold: 100.0,
            min_block: 4,
            max_block: 32,
            patch_stride: 64,
            batch_size: 16,
            base_lr: 1e-4,
            lr_gamma: 0.1,
            lr_interval: 100,
            total_epochs: 120,
            epochs: 60,
            finetune_epochs: 20,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            tile_size: 64,
            tile_overlap: 8,
            stem_channels: 64,
            block_channels: 64,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "base_qp",
    "qps",
    "var_threshold",
    "min_block",
    "max_block",
    "patch_stride",
    "batch_size",
    "base_lr",
    "lr_gamma",
    "lr_interval",
    "total_epochs",
    "epochs",
    "finetune_epochs",
    "beta1",
    "beta2",
    "adam_eps",
    "weight_decay",
    "tile_size",
    "tile_overlap",
    "stem_channels",
    "block_channels",
];

fn nearest_key(key: &str) -> &'static str {
    CONFIG_KEYS
        .iter()
        .copied()
        .min_by_key(|k| strsim::levenshtein(key, k))
        .expect("non-empty key list")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, PersistError> {
        let mut c = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| PersistError::Config {
                line: line_no,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| PersistError::Config {
                line: line_no,
                message: format!("{key}: {what} {value:?}"),
            };
            macro_rules! num {
                ($t:ty) => {
                    value.parse::<$t>().map_err(|_| bad(concat!("expected ", stringify!($t), ", got")))?
                };
            }
            match key {
                "seed" => c.seed = num!(u64),
                "base_qp" => c.base_qp = num!(u8),
                "qps" => {
                    c.qps = value
                        .split(',')
                        .map(|s| s.trim().parse::<u8>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("expected comma-separated qps, got"))?
                }
                "var_threshold" => c.var_threshold = num!(f64),
                "min_block" => c.min_block = num!(usize),
                "max_block" => c.max_block = num!(usize),
                "patch_stride" => c.patch_stride = num!(usize),
                "batch_size" => c.batch_size = num!(usize),
                "base_lr" => c.base_lr = num!(f64),
                "lr_gamma" => c.lr_gamma = num!(f64),
                "lr_interval" => c.lr_interval = num!(usize),
                "total_epochs" => c.total_epochs = num!(usize),
                "epochs" => c.epochs = num!(usize),
                "finetune_epochs" => c.finetune_epochs = num!(usize),
                "beta1" => c.beta1 = num!(f64),
                "beta2" => c.beta2 = num!(f64),
                "adam_eps" => c.adam_eps = num!(f64),
                "weight_decay" => c.weight_decay = num!(f64),
                "tile_size" => c.tile_size = num!(usize),
                "tile_overlap" => c.tile_overlap = num!(usize),
                "stem_channels" => c.stem_channels = num!(usize),
                "block_channels" => c.block_channels = num!(usize),
                _ => {
                    return Err(PersistError::UnknownKey {
                        line: line_no,
                        key: key.to_string(),
                        suggestion: nearest_key(key).to_string(),
                    })
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PersistError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Range checks applied before any pipeline stage runs.
    pub fn validate(&self) -> Result<(), PersistError> {
        let invalid = |key: &str, msg: String| Err(PersistError::Invalid { key: key.to_string(), message: msg });
        if self.base_qp > 51 {
            return invalid("base_qp", format!("{} outside [0, 51]", self.base_qp));
        }
        if self.qps.is_empty() || self.qps.iter().any(|&q| q > 51) {
            return invalid("qps", "need at least one qp, each in [0, 51]".into());
        }
        if let Err(e) = self.quadtree().validate() {
            return invalid("min_block/max_block/var_threshold", e.to_string());
        }
        for (key, v) in [
            ("patch_stride", self.patch_stride),
            ("batch_size", self.batch_size),
            ("lr_interval", self.lr_interval),
            ("total_epochs", self.total_epochs),
            ("tile_size", self.tile_size),
            ("stem_channels", self.stem_channels),
            ("block_channels", self.block_channels),
        ] {
            if v == 0 {
                return invalid(key, "must be positive".into());
            }
        }
        for (key, v) in [("base_lr", self.base_lr), ("adam_eps", self.adam_eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(key, format!("must be positive, got {v}"));
            }
        }
        for (key, v) in [("lr_gamma", self.lr_gamma), ("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..=1.0).contains(&v) || (key != "lr_gamma" && v == 1.0) {
                return invalid(key, format!("{v} outside its valid range"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return invalid("weight_decay", format!("must be non-negative, got {}", self.weight_decay));
        }
        if self.tile_size % 4 != 0 || 2 * self.tile_overlap >= self.tile_size {
            return invalid(
                "tile_size/tile_overlap",
                "tile size must be a multiple of 4 and exceed twice the overlap".into(),
            );
        }
        Ok(())
    }

    pub fn quadtree(&self) -> QuadtreeParams {
        QuadtreeParams {
            max_size: self.max_block,
            min_size: self.min_block,
            var_threshold: self.var_threshold,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.base_lr,
            gamma: self.lr_gamma,
            interval: self.lr_interval,
            total_epochs: self.total_epochs,
        }
    }

    pub fn tiles(&self) -> TileParams {
        TileParams {
            size: self.tile_size,
            overlap: self.tile_overlap,
        }
    }

    pub fn train_options(&self, epochs: usize) -> TrainOptions {
        TrainOptions {
            epochs,
            batch: self.batch_size,
            seed: self.seed,
            schedule: self.schedule(),
            adam: AdamParams {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
                weight_decay: self.weight_decay,
            },
            quadtree: self.quadtree(),
            verbose: false,
        }
    }
}
