//! Run configuration: JSON schema, validation, defaults, and presets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::space::{micro_space_config, OperatorSpec, SpaceConfig};
use crate::trainer::{Mode, TrainConfig};

/// Where the dataset comes from. Exactly one source per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Idx(IdxPaths),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdxPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub val_images: PathBuf,
    pub val_labels: PathBuf,
}

/// Settings for stand-alone (from scratch) training of a single path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScratchConfig {
    #[serde(default = "default_scratch_steps")]
    pub steps: usize,
    #[serde(default = "default_scratch_lr")]
    pub lr0: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Ground truth is the median over these seeds.
    #[serde(default = "default_scratch_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

impl Default for ScratchConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

fn default_scratch_steps() -> usize {
    300
}
fn default_scratch_lr() -> f64 {
    0.25
}
fn default_batch() -> usize {
    16
}
fn default_scratch_seeds() -> Vec<u64> {
    vec![1_000, 1_001, 1_002]
}
fn default_init_scale() -> f64 {
    1.0
}

/// Settings for ranking experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankConfig {
    /// Paths ranked when the space is too large to enumerate.
    #[serde(default = "default_rank_paths")]
    pub n_paths: usize,
    /// Spaces up to this many paths are ranked exhaustively.
    #[serde(default = "default_enum_cap")]
    pub enumerate_cap: u64,
}

impl Default for RankConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

fn default_rank_paths() -> usize {
    30
}
fn default_enum_cap() -> u64 {
    128
}

/// Top-level run description, loaded from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub space: SpaceConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub dataset: DatasetSource,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Steps between checkpoints; 0 disables periodic checkpoints (a final
    /// one is still written when an output directory is in use).
    #[serde(default)]
    pub checkpoint_interval: usize,
    #[serde(default)]
    pub scratch: ScratchConfig,
    #[serde(default)]
    pub rank: RankConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/out")
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |field: &str, message: String| Error::Config {
            field: field.into(),
            message,
        };
        if self.train.board_size == 0 {
            return Err(cfg_err("board.size", "must be at least 1".into()));
        }
        if self.train.steps == 0 {
            return Err(cfg_err("train.steps", "must be at least 1".into()));
        }
        if self.train.meta_interval == 0 {
            return Err(cfg_err("train.meta_interval", "must be at least 1".into()));
        }
        if !(self.train.lr0 > 0.0) || !self.train.lr0.is_finite() {
            return Err(cfg_err("train.lr0", "must be positive and finite".into()));
        }
        if self.train.meta_lr < 0.0 || !self.train.meta_lr.is_finite() {
            return Err(cfg_err("train.meta_lr", "must be non-negative".into()));
        }
        if self.train.batch_size == 0 {
            return Err(cfg_err("train.batch_size", "must be at least 1".into()));
        }
        if self.train.meta_hidden == 0 {
            return Err(cfg_err("train.meta_hidden", "must be at least 1".into()));
        }
        if self.train.eval_interval == 0 {
            return Err(cfg_err("train.eval_interval", "must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.train.momentum) {
            return Err(cfg_err("train.momentum", "must lie in [0, 1)".into()));
        }
        if let Some(max) = self.train.flops_max {
            if self.train.flops_min > max {
                return Err(cfg_err(
                    "train.flops_min",
                    format!("min {} exceeds max {}", self.train.flops_min, max),
                ));
            }
        }
        if let Some(r) = self.train.rho_override {
            if !r.is_finite() || r < 0.0 {
                return Err(cfg_err(
                    "train.rho_override",
                    "must be finite and non-negative".into(),
                ));
            }
        }
        if self.scratch.seeds.is_empty() {
            return Err(cfg_err("scratch.seeds", "need at least one seed".into()));
        }
        if let DatasetSource::Synthetic(s) = &self.dataset {
            if s.resolution != self.space.input_resolution {
                return Err(cfg_err(
                    "dataset.synthetic.resolution",
                    format!(
                        "dataset resolution {} != space input_resolution {}",
                        s.resolution, self.space.input_resolution
                    ),
                ));
            }
            if s.classes != self.space.classes {
                return Err(cfg_err(
                    "dataset.synthetic.classes",
                    format!(
                        "dataset classes {} != space classes {}",
                        s.classes, self.space.classes
                    ),
                ));
            }
        }
        // Space invariants get their own field-specific errors.
        crate::space::build_space(&self.space)?;
        Ok(())
    }

    /// Resolve the validation-subset size against an actual dataset.
    pub fn val_subset_size(&self, dataset: &Dataset) -> Result<usize> {
        let n_val = dataset.val.len();
        match self.train.val_subset {
            None => Ok(n_val.min(2048)),
            Some(0) => Err(Error::Config {
                field: "train.val_subset".into(),
                message: "must be at least 1".into(),
            }),
            Some(k) if k > n_val => Err(Error::Config {
                field: "train.val_subset".into(),
                message: format!("subset {} exceeds validation set size {}", k, n_val),
            }),
            Some(k) => Ok(k),
        }
    }

    /// Materialize the dataset this config names and check it against the
    /// space shapes.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let dataset = match &self.dataset {
            DatasetSource::Synthetic(spec) => crate::data::gen_synthetic(spec)?,
            DatasetSource::Idx(paths) => {
                let train = crate::data::load_idx(&paths.train_images, &paths.train_labels)?;
                let val = crate::data::load_idx(&paths.val_images, &paths.val_labels)?;
                let classes = infer_classes(&train, &val);
                Dataset { classes, train, val }
            }
        };
        if dataset.resolution() != self.space.input_resolution
            || dataset.channels() != self.space.input_channels
            || dataset.classes != self.space.classes
        {
            return Err(Error::Config {
                field: "dataset".into(),
                message: format!(
                    "dataset ({}x{} ch {} classes {}) does not match space ({}x{} ch {} classes {})",
                    dataset.resolution(),
                    dataset.resolution(),
                    dataset.channels(),
                    dataset.classes,
                    self.space.input_resolution,
                    self.space.input_resolution,
                    self.space.input_channels,
                    self.space.classes
                ),
            });
        }
        Ok(dataset)
    }
}

fn infer_classes(train: &Split, val: &Split) -> usize {
    let max = train
        .labels()
        .iter()
        .chain(val.labels())
        .max()
        .copied()
        .unwrap_or(0);
    (max + 1).max(2)
}

/// Load and validate a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    // serde_json errors carry line/column context.
    let config: RunConfig = serde_json::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

pub fn save_config(config: &RunConfig, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(config)?;
    fs::write(path, text)?;
    Ok(())
}

/// Desk-scale preset over the 27-path micro space.
pub fn micro_preset() -> RunConfig {
    RunConfig {
        space: micro_space_config(),
        train: TrainConfig {
            steps: 400,
            meta_interval: 20,
            val_subset: Some(128),
            mode: Mode::Cream,
            ..TrainConfig::default()
        },
        dataset: DatasetSource::Synthetic(SyntheticSpec {
            classes: 4,
            resolution: 8,
            n_train: 512,
            n_val: 256,
            noise: 0.6,
            seed: 77,
        }),
        out_dir: default_out_dir(),
        checkpoint_interval: 0,
        scratch: ScratchConfig::default(),
        rank: RankConfig::default(),
    }
}

/// Micro preset over the extended operator menu (resblock and plain conv
/// added), 4^3 = 64 paths.
pub fn micro_extended_preset() -> RunConfig {
    let mut cfg = micro_preset();
    for stage in &mut cfg.space.stages {
        stage.operators = vec![
            OperatorSpec::Skip,
            OperatorSpec::Conv2d { kernel: 3 },
            OperatorSpec::MbConv { kernel: 3, expansion: 2 },
            OperatorSpec::ResBlock,
        ];
    }
    cfg
}
