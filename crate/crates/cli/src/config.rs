//! Experiment configuration: one TOML file per experiment, validated before
//! any data is loaded or any training step runs.

use std::path::{Path, PathBuf};

use deeptwist_core::deeptwist::{make_hook, DeepTwistConfig, Method};
use deeptwist_core::nn::{load_checkpoint, MlpModel, OptimizerKind, StepDecay, LENET_300_100};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Overrides `data.root` when set.
pub const DATA_ROOT_ENV: &str = "DEEPTWIST_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    /// Directory receiving the run artifacts; sweep points go to subdirectories.
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub mode: Mode,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub deeptwist: Option<DeepTwistConfig>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
}

fn default_batch_size() -> usize {
    50
}

fn default_eval_every() -> usize {
    deeptwist_core::nn::EVAL_EVERY
}

/// How the assignments in `[deeptwist]` are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Periodic distortion during training.
    #[default]
    Deeptwist,
    /// One-shot pruning at the final rate, then training with pruned
    /// positions held at zero.
    MaskFrozen,
    /// One-shot rank truncation of the assigned layers, whose weights are
    /// then frozen while the rest of the network trains.
    TruncateFrozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub root: PathBuf,
    #[serde(default = "default_train_images")]
    pub train_images: String,
    #[serde(default = "default_train_labels")]
    pub train_labels: String,
    #[serde(default = "default_test_images")]
    pub test_images: String,
    #[serde(default = "default_test_labels")]
    pub test_labels: String,
    /// Use only the first `n` training samples.
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
}

fn default_train_images() -> String {
    "train-images-idx3-ubyte".into()
}
fn default_train_labels() -> String {
    "train-labels-idx1-ubyte".into()
}
fn default_test_images() -> String {
    "t10k-images-idx3-ubyte".into()
}
fn default_test_labels() -> String {
    "t10k-labels-idx1-ubyte".into()
}

impl DataConfig {
    pub fn train_paths(&self) -> (PathBuf, PathBuf) {
        (self.root.join(&self.train_images), self.root.join(&self.train_labels))
    }

    pub fn test_paths(&self) -> (PathBuf, PathBuf) {
        (self.root.join(&self.test_images), self.root.join(&self.test_labels))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_topology")]
    pub topology: Vec<usize>,
    /// Initialization seed; the experiment seed when absent.
    #[serde(default)]
    pub init_seed: Option<u64>,
    /// Start from these weights instead of a fresh initialization.
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
}

fn default_topology() -> Vec<usize> {
    LENET_300_100.to_vec()
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            topology: default_topology(),
            init_seed: None,
            init_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(default = "default_optimizer")]
    pub kind: OptimizerKind,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub decay: Option<StepDecay>,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}

fn default_learning_rate() -> f64 {
    1e-3
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: default_optimizer(),
            learning_rate: default_learning_rate(),
            decay: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    DistortionStep,
    Rank,
    Bits,
    #[serde(rename = "p_f")]
    FinalRate,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::DistortionStep => "distortion_step",
            SweepAxis::Rank => "rank",
            SweepAxis::Bits => "bits",
            SweepAxis::FinalRate => "p_f",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// One concrete run of a (possibly swept) experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: f64,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn as_count(axis: SweepAxis, v: f64) -> Result<usize, CliError> {
    if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
        return Err(config_err(format!("sweep over {} needs positive integers, got {v}", axis.name())));
    }
    Ok(v as usize)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    /// Reads a config file. Relative paths inside it are taken relative to the
    /// file's directory, and [`DATA_ROOT_ENV`] replaces the data root if set.
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.output_dir = resolve(base, &cfg.output_dir);
        cfg.data.root = match std::env::var_os(DATA_ROOT_ENV) {
            Some(root) => PathBuf::from(root),
            None => resolve(base, &cfg.data.root),
        };
        if let Some(ckpt) = &cfg.model.init_checkpoint {
            cfg.model.init_checkpoint = Some(resolve(base, ckpt));
        }
        Ok(cfg)
    }

    /// Builds the starting model: the init checkpoint if given, otherwise a
    /// fresh Glorot initialization of `model.topology`.
    pub fn initial_model(&self) -> Result<MlpModel, CliError> {
        match &self.model.init_checkpoint {
            Some(path) => {
                let model = load_checkpoint(path)
                    .map_err(|e| config_err(format!("init checkpoint {}: {e}", path.display())))?;
                let mut widths = vec![model.input_width()];
                widths.extend(model.layers().iter().map(|l| l.fan_out()));
                if widths != self.model.topology {
                    return Err(config_err(format!(
                        "init checkpoint has topology {widths:?}, config says {:?}",
                        self.model.topology
                    )));
                }
                Ok(model)
            }
            None => MlpModel::with_topology(&self.model.topology, self.model.init_seed.unwrap_or(self.seed))
                .map_err(|e| config_err(e.to_string())),
        }
    }

    /// Everything that can be checked without loading data or training.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.trim().is_empty() {
            return Err(config_err("name must not be empty"));
        }
        if self.steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(config_err("steps, batch_size and eval_every must be positive"));
        }
        let lr = self.optimizer.learning_rate;
        if !(lr.is_finite() && lr > 0.0) {
            return Err(config_err(format!("learning_rate must be positive, got {lr}")));
        }
        if let Some(d) = self.optimizer.decay {
            if d.every == 0 || !(d.factor > 0.0 && d.factor <= 1.0) {
                return Err(config_err(format!("invalid learning-rate decay {d:?}")));
            }
        }
        let (ti, tl) = self.data.train_paths();
        let (ei, el) = self.data.test_paths();
        for p in [ti, tl, ei, el] {
            if !p.is_file() {
                return Err(config_err(format!("data file {} does not exist", p.display())));
            }
        }
        if matches!(self.data.train_limit, Some(0)) || matches!(self.data.test_limit, Some(0)) {
            return Err(config_err("data limits must be positive"));
        }
        for point in self.expand()? {
            point.validate_point()?;
        }
        Ok(())
    }

    fn validate_point(&self) -> Result<(), CliError> {
        let model = self.initial_model()?;
        let assignments = self.deeptwist.as_ref().map_or(&[][..], |d| &d.assignments[..]);
        match self.mode {
            Mode::Deeptwist => {}
            Mode::MaskFrozen => {
                if assignments.is_empty() || !assignments.iter().all(|a| matches!(a.method, Method::Prune { .. })) {
                    return Err(config_err("mask-frozen mode needs one or more prune assignments and nothing else"));
                }
            }
            Mode::TruncateFrozen => {
                if assignments.is_empty() || !assignments.iter().all(|a| matches!(a.method, Method::LowRank { .. })) {
                    return Err(config_err("truncate-frozen mode needs one or more lowrank assignments and nothing else"));
                }
            }
        }
        if let Some(dt) = &self.deeptwist {
            make_hook(dt.clone(), &model).map_err(|e| config_err(e.to_string()))?;
        }
        Ok(())
    }

    /// The concrete runs: the config itself when there is no sweep, otherwise
    /// one copy per sweep value with the axis applied and its own output subdirectory.
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>, CliError> {
        let Some(sweep) = &self.sweep else {
            return Ok(vec![self.clone()]);
        };
        if sweep.values.is_empty() {
            return Err(config_err("sweep values must not be empty"));
        }
        sweep.values.iter().map(|&v| self.at_point(sweep.axis, v)).collect()
    }

    fn at_point(&self, axis: SweepAxis, value: f64) -> Result<ExperimentConfig, CliError> {
        let mut cfg = self.clone();
        cfg.sweep = None;
        cfg.output_dir = self.output_dir.join(format!("{}-{value}", axis.name()));
        let dt = cfg
            .deeptwist
            .as_mut()
            .ok_or_else(|| config_err("a sweep needs a [deeptwist] section"))?;
        let mut touched = 0;
        match axis {
            SweepAxis::DistortionStep => {
                dt.distortion_step = as_count(axis, value)?;
                touched = 1;
            }
            SweepAxis::Rank | SweepAxis::Bits | SweepAxis::FinalRate => {
                for a in &mut dt.assignments {
                    match (&mut a.method, axis) {
                        (Method::LowRank { rank }, SweepAxis::Rank) => *rank = as_count(axis, value)?,
                        (Method::Quantize { bits, .. }, SweepAxis::Bits) => *bits = as_count(axis, value)?,
                        (Method::Prune { schedule }, SweepAxis::FinalRate) => schedule.final_rate = value,
                        _ => continue,
                    }
                    touched += 1;
                }
            }
        }
        if touched == 0 {
            return Err(config_err(format!("sweep axis {} matches no assignment", axis.name())));
        }
        Ok(cfg)
    }

    pub fn sweep_point(&self, value: f64) -> Option<SweepPoint> {
        self.sweep.as_ref().map(|s| SweepPoint { axis: s.axis, value })
    }
}
