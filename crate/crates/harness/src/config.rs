//! Run configuration and its `key = value` text format.

use std::path::Path;
use std::str::FromStr;

use hspn_core::completion::{CompletionConfig, LAMBDA3, LAMBDA4};
use hspn_core::predictor::{PredictorConfig, LAMBDA1, LAMBDA2_END, LAMBDA2_START, LAMBDA_GP};
use hspn_core::{Error, Result};

/// Network sizes used for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Default,
    Compact,
}

impl Preset {
    pub fn predictor(self) -> PredictorConfig {
        match self {
            Preset::Default => PredictorConfig::default(),
            Preset::Compact => PredictorConfig::compact(),
        }
    }

    pub fn completion(self) -> CompletionConfig {
        match self {
            Preset::Default => CompletionConfig::default(),
            Preset::Compact => CompletionConfig::compact(),
        }
    }
}

/// Which samples an evaluation covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2_start: f64,
    pub lambda2_end: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda_gp: f64,
    pub lr: f64,
    /// Learning rate of the completion phase.
    pub completion_lr: f64,
    pub epochs: usize,
    pub completion_epochs: usize,
    pub n_critic: usize,
    pub seed: u64,
    pub batch: usize,
    /// Optional cap on optimizer steps per phase.
    pub max_steps: Option<usize>,
    /// Stop a phase once the mean epoch CD falls below this fraction of the
    /// first epoch's value.
    pub stop_ratio: Option<f64>,
    pub preset: Preset,
    /// Samples written by `datagen`.
    pub samples: usize,
    /// Slices per sample written by `datagen`.
    pub slices: usize,
    /// Slices the image encoder consumes.
    pub input_slices: usize,
    pub emd_points: usize,
    pub emd_epsilon: f64,
    pub emd_sweeps: usize,
    /// Completion snapshots evaluated by `ablate`; empty means the last epoch.
    pub checkpoints: Vec<usize>,
    pub eval_split: EvalSplit,
    /// Variant tags run by `ablate` and `classify`.
    pub variants: Vec<String>,
    pub points: Vec<usize>,
    pub slice_counts: Vec<usize>,
    pub classifier_epochs: usize,
    pub classifier_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: LAMBDA1,
            lambda2_start: LAMBDA2_START,
            lambda2_end: LAMBDA2_END,
            lambda3: LAMBDA3,
            lambda4: LAMBDA4,
            lambda_gp: LAMBDA_GP,
            lr: 1e-4,
            completion_lr: 1e-4,
            epochs: 100,
            completion_epochs: 100,
            n_critic: 5,
            seed: 0,
            batch: 8,
            max_steps: None,
            stop_ratio: None,
            preset: Preset::Default,
            samples: 200,
            slices: 7,
            input_slices: 1,
            emd_points: 256,
            emd_epsilon: 0.01,
            emd_sweeps: 100,
            checkpoints: Vec::new(),
            eval_split: EvalSplit::Test,
            variants: crate::ablation::TABLE_VARIANTS.iter().map(|s| s.to_string()).collect(),
            points: vec![2048, 1024, 512, 256],
            slice_counts: vec![1, 3, 5, 7],
            classifier_epochs: 20,
            classifier_lr: 1e-3,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl TrainConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "lambda1" => self.lambda1 = parse(key, v)?,
            "lambda2_start" => self.lambda2_start = parse(key, v)?,
            "lambda2_end" => self.lambda2_end = parse(key, v)?,
            "lambda3" => self.lambda3 = parse(key, v)?,
            "lambda4" => self.lambda4 = parse(key, v)?,
            "lambda_gp" => self.lambda_gp = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "completion_lr" => self.completion_lr = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "completion_epochs" => self.completion_epochs = parse(key, v)?,
            "n_critic" => self.n_critic = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "max_steps" => self.max_steps = (v != "none").then(|| parse(key, v)).transpose()?,
            "stop_ratio" => self.stop_ratio = (v != "none").then(|| parse(key, v)).transpose()?,
            "preset" => {
                self.preset = match v {
                    "default" => Preset::Default,
                    "compact" => Preset::Compact,
                    _ => return Err(Error::invalid(format!("unknown preset {v:?}"))),
                }
            }
            "samples" => self.samples = parse(key, v)?,
            "slices" => self.slices = parse(key, v)?,
            "input_slices" => self.input_slices = parse(key, v)?,
            "emd_points" => self.emd_points = parse(key, v)?,
            "emd_epsilon" => self.emd_epsilon = parse(key, v)?,
            "emd_sweeps" => self.emd_sweeps = parse(key, v)?,
            "checkpoints" => self.checkpoints = parse_list(key, v)?,
            "eval_split" => {
                self.eval_split = match v {
                    "train" => EvalSplit::Train,
                    "test" => EvalSplit::Test,
                    "all" => EvalSplit::All,
                    _ => return Err(Error::invalid(format!("unknown split {v:?}"))),
                }
            }
            "variants" => self.variants = parse_list(key, v)?,
            "points" => self.points = parse_list(key, v)?,
            "slice_counts" => self.slice_counts = parse_list(key, v)?,
            "classifier_epochs" => self.classifier_epochs = parse(key, v)?,
            "classifier_lr" => self.classifier_lr = parse(key, v)?,
            other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Defaults overridden by `key = value` lines; `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
            _ => Error::io(path, e),
        })?;
        Self::parse_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.epochs == 0 || self.completion_epochs == 0 {
            return Err(Error::invalid("batch and epoch counts must be positive"));
        }
        if !(self.lr > 0.0) || !(self.completion_lr > 0.0) || !(self.classifier_lr > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.input_slices == 0 || self.input_slices % 2 == 0 {
            return Err(Error::invalid("input_slices must be odd"));
        }
        Ok(())
    }

    /// `λ2` for `epoch` (0-based), linear from start to end over the run.
    pub fn lambda2(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lambda2_start;
        }
        let t = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        self.lambda2_start + (self.lambda2_end - self.lambda2_start) * t
    }

    pub fn predictor_config(&self) -> PredictorConfig {
        self.preset.predictor().with_slices(self.input_slices)
    }
}
