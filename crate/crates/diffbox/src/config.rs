//! Run configuration: defaults, an optional JSON file, and command-line
//! overrides, in increasing priority.

use std::path::{Path, PathBuf};

use clap::Args;
use diffbox_core::assignment::{CostWeights, FocalParams};
use diffbox_core::corruption::PaddingStrategy;
use diffbox_core::denoiser::DecoderConfig;
use diffbox_core::neural::AdamW;
use diffbox_core::sampler::SamplerConfig;
use diffbox_core::synthdata::DatasetSpec;
use diffbox_core::train::TrainConfig;
use diffbox_core::Schedule;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Every tunable knob. Field names double as JSON keys; flags use the
/// kebab-case spelling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub timesteps: usize,

    pub num_scenes: usize,
    pub num_classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_side: f64,
    pub max_side: f64,
    pub max_overlap: f64,
    pub grid_size: usize,
    pub first_image_id: u64,

    pub num_stages: usize,
    pub hidden_dim: usize,
    pub pool_size: usize,
    pub timestep_dim: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub n_train: usize,
    pub padding: String,
    pub scale: f64,
    pub top_k: usize,
    pub lambda_cls: f64,
    pub lambda_l1: f64,
    pub lambda_giou: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub lr_drops: bool,

    pub n_eval: usize,
    pub steps: usize,
    pub eta: f64,
    pub renewal_threshold: f64,
    pub ensemble_nms_iou: f64,
    pub use_ddim: bool,
    pub use_renewal: bool,

    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = DatasetSpec::default();
        let dec = DecoderConfig::default();
        let train = TrainConfig::default();
        let sampler = SamplerConfig::default();
        Self {
            seed: 0,
            timesteps: 1000,
            num_scenes: data.num_scenes,
            num_classes: data.num_classes,
            min_objects: data.min_objects,
            max_objects: data.max_objects,
            min_side: data.min_side,
            max_side: data.max_side,
            max_overlap: data.max_overlap,
            grid_size: data.grid_size,
            first_image_id: data.first_image_id,
            num_stages: dec.num_stages,
            hidden_dim: dec.hidden_dim,
            pool_size: dec.pool_size,
            timestep_dim: dec.timestep_dim,
            epochs: train.epochs,
            batch_size: train.batch_size,
            n_train: train.n_train,
            padding: train.padding.name().to_string(),
            scale: train.scale,
            top_k: train.top_k,
            lambda_cls: train.weights.cls,
            lambda_l1: train.weights.l1,
            lambda_giou: train.weights.giou,
            focal_alpha: train.focal.alpha,
            focal_gamma: train.focal.gamma,
            lr: train.optimizer.lr,
            beta1: train.optimizer.beta1,
            beta2: train.optimizer.beta2,
            eps: train.optimizer.eps,
            weight_decay: train.optimizer.weight_decay,
            clip_norm: train.clip_norm,
            lr_drops: train.lr_drops,
            n_eval: sampler.n_eval,
            steps: sampler.steps,
            eta: sampler.eta,
            renewal_threshold: sampler.renewal_threshold,
            ensemble_nms_iou: sampler.ensemble_nms_iou,
            use_ddim: sampler.use_ddim,
            use_renewal: sampler.use_renewal,
            dataset: None,
            checkpoint: None,
        }
    }
}

/// Command-line overrides; each flag mirrors a [`RunConfig`] field.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct ConfigFlags {
    /// JSON file with any subset of the configuration fields.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Diffusion steps T.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timesteps: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_scenes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_objects: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_objects: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_side: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_side: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_overlap: Option<f64>,
    /// Feature grid height and width.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_image_id: Option<u64>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_stages: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestep_dim: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Boxes per training image after padding.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    /// repeat, cat-gaussian, cat-uniform or cat-full.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub padding: Option<String>,
    /// Signal scale.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_cls: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_l1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_giou: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub focal_alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub focal_gamma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    /// Global gradient-norm clip; 0 disables.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    /// Divide the learning rate by 10 late in the run (twice).
    #[arg(long, value_name = "BOOL")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_drops: Option<bool>,

    /// Boxes sampled per image at inference.
    #[arg(long = "num-boxes", alias = "n-eval")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_eval: Option<usize>,
    /// Sampling steps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// DDIM stochasticity; 0 is deterministic.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub renewal_threshold: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble_nms_iou: Option<f64>,
    #[arg(long, value_name = "BOOL")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_ddim: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_renewal: Option<bool>,

    /// Dataset file (JSON Lines).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Checkpoint file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

/// A configuration mistake; reported as a usage error.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl RunConfig {
    /// Defaults, then `flags.config` if given, then explicit flags.
    pub fn resolve(flags: &ConfigFlags) -> Result<Self, ConfigError> {
        let mut merged = serde_json::to_value(RunConfig::default()).expect("config serializes");
        if let Some(path) = &flags.config {
            let file = Self::read_file_value(path)?;
            overlay(&mut merged, file);
        }
        overlay(&mut merged, serde_json::to_value(flags).expect("flags serialize"));
        let cfg: RunConfig = serde_json::from_value(merged).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn read_file_value(path: &Path) -> Result<Value, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        let value: Value = serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.display().to_string(), source })?;
        // reject unknown keys and wrong types up front, naming the file
        serde_json::from_value::<RunConfig>(value.clone()).map_err(|source| ConfigError::Parse { path: path.display().to_string(), source })?;
        Ok(value)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: diffbox_core::Error| ConfigError::Invalid(e.to_string());
        if self.timesteps == 0 {
            return Err(ConfigError::Invalid("timesteps must be positive".into()));
        }
        self.padding_strategy()?;
        self.dataset_spec().validate().map_err(invalid)?;
        self.decoder_config().validate().map_err(invalid)?;
        self.train_config()?.validate().map_err(invalid)?;
        self.sampler_config().validate(self.timesteps).map_err(invalid)?;
        Ok(())
    }

    pub fn padding_strategy(&self) -> Result<PaddingStrategy, ConfigError> {
        PaddingStrategy::from_name(&self.padding).ok_or_else(|| {
            let names: Vec<&str> = PaddingStrategy::ALL.iter().map(|p| p.name()).collect();
            ConfigError::Invalid(format!("unknown padding `{}`, expected one of {}", self.padding, names.join(", ")))
        })
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::cosine(self.timesteps).expect("validated")
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            num_scenes: self.num_scenes,
            num_classes: self.num_classes,
            min_objects: self.min_objects,
            max_objects: self.max_objects,
            min_side: self.min_side,
            max_side: self.max_side,
            max_overlap: self.max_overlap,
            grid_size: self.grid_size,
            seed: self.seed,
            first_image_id: self.first_image_id,
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            num_stages: self.num_stages,
            hidden_dim: self.hidden_dim,
            pool_size: self.pool_size,
            timestep_dim: self.timestep_dim,
            ..DecoderConfig::for_classes(self.num_classes)
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        Ok(TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            n_train: self.n_train,
            padding: self.padding_strategy()?,
            scale: self.scale,
            top_k: self.top_k,
            weights: CostWeights { cls: self.lambda_cls, l1: self.lambda_l1, giou: self.lambda_giou },
            focal: FocalParams { alpha: self.focal_alpha, gamma: self.focal_gamma },
            optimizer: AdamW { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay },
            clip_norm: self.clip_norm,
            lr_drops: self.lr_drops,
            seed: self.seed,
        })
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            n_eval: self.n_eval,
            steps: self.steps,
            eta: self.eta,
            renewal_threshold: self.renewal_threshold,
            ensemble_nms_iou: self.ensemble_nms_iou,
            scale: self.scale,
            use_ddim: self.use_ddim,
            use_renewal: self.use_renewal,
        }
    }
}

fn overlay(base: &mut Value, top: Value) {
    if let (Value::Object(b), Value::Object(t)) = (base, top) {
        for (k, v) in t {
            b.insert(k, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_validate() {
        let cfg = RunConfig::resolve(&ConfigFlags::default()).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.top_k, 5);
        assert_eq!(cfg.renewal_threshold, 0.5);
    }

    #[test]
    fn flags_override_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, r#"{{"epochs": 7, "lr": 0.01, "padding": "repeat"}}"#).unwrap();
        let flags = ConfigFlags { config: Some(f.path().to_path_buf()), lr: Some(0.5), ..ConfigFlags::default() };
        let cfg = RunConfig::resolve(&flags).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.lr, 0.5);
        assert_eq!(cfg.padding, "repeat");
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, r#"{{"epoch": 7}}"#).unwrap();
        let flags = ConfigFlags { config: Some(f.path().to_path_buf()), ..ConfigFlags::default() };
        assert!(matches!(RunConfig::resolve(&flags), Err(ConfigError::Parse { .. })));
        let flags = ConfigFlags { padding: Some("zeros".into()), ..ConfigFlags::default() };
        assert!(matches!(RunConfig::resolve(&flags), Err(ConfigError::Invalid(_))));
        let flags = ConfigFlags { steps: Some(2000), ..ConfigFlags::default() };
        assert!(RunConfig::resolve(&flags).is_err());
    }
}
