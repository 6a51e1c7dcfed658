//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use diffmark::data::SyntheticKind;
use diffmark::denoiser::{ConvConfig, OptimizerKind, TrainConfig};
use diffmark::plot::PlotLayout;
use diffmark::reverse::SigmaMode;
use diffmark::verification::VerifyOptions;
use diffmark::watermark::{MarkGeometry, MarkPosition, MarkShape, ScaleMode};
use diffmark::{F1Mode, VarianceSchedule};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleBlock {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleBlock {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleBlock {
    pub fn build(&self) -> CliResult<VarianceSchedule> {
        Ok(VarianceSchedule::linear(self.steps, self.beta_start, self.beta_end)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WatermarkBlock {
    pub shape: MarkShape,
    pub position: MarkPosition,
    pub size: usize,
    /// One value per channel, or a single value broadcast to all channels.
    pub color: Vec<f64>,
    pub gamma: f64,
    /// Watermark step as a fraction of T.
    pub t_a_fraction: f64,
    pub f1_mode: F1Mode,
    pub scale_mode: ScaleMode,
}

impl Default for WatermarkBlock {
    fn default() -> Self {
        Self {
            shape: MarkShape::Square,
            position: MarkPosition::BottomRight,
            size: 4,
            color: vec![1.0],
            gamma: 0.8,
            t_a_fraction: 0.5,
            f1_mode: F1Mode::Zero,
            scale_mode: ScaleMode::Batch,
        }
    }
}

impl WatermarkBlock {
    pub fn t_a(&self, steps: usize) -> usize {
        (self.t_a_fraction * steps as f64).round() as usize
    }

    pub fn geometry(&self) -> MarkGeometry {
        MarkGeometry {
            shape: self.shape,
            position: self.position,
            size: self.size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataBlock {
    /// Synthetic corpus kind, used when no dataset path is configured.
    pub kind: SyntheticKind,
    pub count: usize,
    pub size: usize,
    /// Keep only the first `limit` images of a dataset file.
    pub limit: Option<usize>,
}

impl Default for DataBlock {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::DigitsLike,
            count: 1,
            size: 16,
            limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelBlock {
    pub hidden: usize,
    pub position_channels: usize,
    pub embed_dim: usize,
    pub embed_hidden: usize,
}

impl Default for ModelBlock {
    fn default() -> Self {
        let d = ConvConfig::desk(1, 8, 8);
        Self {
            hidden: d.hidden,
            position_channels: d.position_channels,
            embed_dim: d.embed_dim,
            embed_hidden: d.embed_hidden,
        }
    }
}

impl ModelBlock {
    pub fn conv_config(&self, (channels, height, width): (usize, usize, usize)) -> ConvConfig {
        ConvConfig {
            channels,
            height,
            width,
            hidden: self.hidden,
            position_channels: self.position_channels,
            embed_dim: self.embed_dim,
            embed_hidden: self.embed_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingBlock {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub ema_rate: Option<f64>,
    pub optimizer: OptimizerKind,
}

impl Default for TrainingBlock {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            steps: d.steps,
            batch_size: d.batch_size,
            ema_rate: d.ema_rate,
            optimizer: d.optimizer,
        }
    }
}

impl TrainingBlock {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            steps: self.steps,
            batch_size: self.batch_size,
            ema_rate: self.ema_rate,
            optimizer: self.optimizer,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingBlock {
    pub batch: usize,
    /// Snapshot steps as fractions of T; t_A is always recorded.
    pub snapshot_fractions: Vec<f64>,
    pub sigma_mode: SigmaMode,
    pub clamp: bool,
    /// Sample from EMA weights when the checkpoint has them.
    pub use_ema: bool,
}

impl Default for SamplingBlock {
    fn default() -> Self {
        Self {
            batch: 100,
            snapshot_fractions: vec![1.0, 0.75, 0.5, 0.25],
            sigma_mode: SigmaMode::GammaSquared,
            clamp: true,
            use_ema: true,
        }
    }
}

impl SamplingBlock {
    pub fn snapshot_steps(&self, steps: usize) -> Vec<usize> {
        self.snapshot_fractions
            .iter()
            .map(|f| (f * steps as f64).round() as usize)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleBlock {
    pub samples: usize,
}

impl Default for OracleBlock {
    fn default() -> Self {
        Self { samples: 100_000 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsBlock {
    /// IDX image file; a synthetic corpus is generated when absent.
    pub dataset: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Checkpoint read by `sample`.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub schedule: ScheduleBlock,
    pub watermark: WatermarkBlock,
    pub data: DataBlock,
    pub model: ModelBlock,
    pub training: TrainingBlock,
    pub sampling: SamplingBlock,
    pub verification: VerifyOptions,
    pub oracle: OracleBlock,
    pub plot: PlotLayout,
    pub paths: PathsBlock,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Relative paths resolve against the config file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut config.paths.dataset,
            &mut config.paths.output_dir,
            &mut config.paths.checkpoint,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        let w = &self.watermark;
        if !(w.t_a_fraction > 0.0 && w.t_a_fraction <= 1.0) {
            return Err(CliError::Config(format!(
                "t_a_fraction {} outside (0, 1]",
                w.t_a_fraction
            )));
        }
        if w.t_a(self.schedule.steps) == 0 {
            return Err(CliError::Config(format!(
                "t_a_fraction {} rounds to step 0 with T = {}",
                w.t_a_fraction, self.schedule.steps
            )));
        }
        if let Some(&f) = self.sampling.snapshot_fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(CliError::Config(format!("snapshot fraction {f} outside [0, 1]")));
        }
        if self.sampling.batch == 0 {
            return Err(CliError::Config("sampling batch must be at least 1".into()));
        }
        if self.oracle.samples < 2 {
            return Err(CliError::Config("oracle samples must be at least 2".into()));
        }
        self.verification.validate()?;
        self.training.train_config(self.seed).validate()?;
        if let Some(p) = &self.paths.dataset {
            if !p.is_file() {
                return Err(CliError::Config(format!("dataset {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Canonical JSON form, the input to the config hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
