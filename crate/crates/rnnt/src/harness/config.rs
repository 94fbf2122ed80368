//! Run configuration: TOML-serializable, with dotted-path overrides and a
//! content digest that ties checkpoints to the configuration that produced
//! them. A run is reproducible from (config, seed) alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::specaug::SpecAugmentConfig;
use crate::model::RnntModel;
use crate::noise::NoiseConfig;
use crate::optim::OptimizerConfig;
use crate::prune::PruneSchedule;
use crate::tensor::Real;

/// Environment variable overriding `train.out_dir`.
pub const OUT_DIR_ENV: &str = "RNNT_OUT_DIR";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default)]
pub struct TrainConfig {
    pub model: RnntModel,
    pub noise: NoiseConfig,
    pub prune: PruneSchedule,
    pub optimizer: OptimizerConfig,
    pub train: LoopConfig,
    pub data: DataConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LoopConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Evaluate (and checkpoint) every this many steps.
    pub eval_every: u64,
    pub seed: u64,
    pub out_dir: String,
    pub max_symbols_per_frame: usize,
    /// Use the alignment-restricted loss when utterances carry alignments.
    pub use_alignment_band: bool,
    /// (left, right) band buffers in frames.
    pub band_left: usize,
    pub band_right: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            steps: 200,
            batch_size: 16,
            eval_every: 20,
            seed: 1,
            out_dir: "runs/default".to_string(),
            max_symbols_per_frame: 8,
            use_alignment_band: false,
            band_left: 0,
            band_right: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Features,
    Wav,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    pub synthetic: SyntheticTaskConfig,
    /// Directories for the features/wav sources.
    pub train_dir: Option<String>,
    pub val_dir: Option<String>,
    /// Vocabulary file (one token per line; blank implicit as the last id).
    pub vocab: Option<String>,
    pub spec_augment_enabled: bool,
    pub spec_augment: SpecAugmentConfig,
    /// Random speed perturbation with ratios {0.9, 1.0, 1.1} (wav source).
    pub speed_perturb: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            synthetic: SyntheticTaskConfig::default(),
            train_dir: None,
            val_dir: None,
            vocab: None,
            spec_augment_enabled: false,
            spec_augment: SpecAugmentConfig::default(),
            speed_perturb: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Copy,
    DelayedCopy,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SyntheticTaskConfig {
    pub kind: TaskKind,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub frames_per_token: usize,
    pub feature_noise_std: Real,
    pub feat_dim: usize,
    /// Silence prefix for the delayed-copy task.
    pub delay_frames: usize,
    pub train_count: usize,
    pub val_count: usize,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        SyntheticTaskConfig {
            kind: TaskKind::Copy,
            vocab_size: 8,
            min_len: 2,
            max_len: 6,
            frames_per_token: 3,
            feature_noise_std: 0.25,
            feat_dim: 16,
            delay_frames: 4,
            train_count: 64,
            val_count: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.noise.validate()?;
        self.prune.validate()?;
        if self.train.steps == 0 || self.train.batch_size == 0 {
            return Err(Error::config("train.steps and train.batch_size must be >= 1"));
        }
        if self.train.eval_every == 0 {
            return Err(Error::config("train.eval_every must be >= 1"));
        }
        match self.data.source {
            DataSource::Synthetic => {
                let t = &self.data.synthetic;
                if t.vocab_size < 2 {
                    return Err(Error::config("synthetic vocab_size must be >= 2"));
                }
                if t.min_len == 0 || t.max_len < t.min_len {
                    return Err(Error::config("synthetic length range invalid"));
                }
                if t.frames_per_token == 0 {
                    return Err(Error::config("frames_per_token must be >= 1"));
                }
                if t.feat_dim != self.model.encoder.input_dim {
                    return Err(Error::config(format!(
                        "synthetic feat_dim {} must match encoder input_dim {}",
                        t.feat_dim, self.model.encoder.input_dim
                    )));
                }
                if t.vocab_size != self.model.predictor.vocab_size {
                    return Err(Error::config(format!(
                        "synthetic vocab_size {} must match predictor vocab_size {}",
                        t.vocab_size, self.model.predictor.vocab_size
                    )));
                }
            }
            DataSource::Features | DataSource::Wav => {
                if self.data.train_dir.is_none() {
                    return Err(Error::config("data.train_dir required for this source"));
                }
                if self.data.vocab.is_none() {
                    return Err(Error::config("data.vocab required for this source"));
                }
            }
        }
        if self.data.spec_augment_enabled {
            self.data
                .spec_augment
                .validate(self.model.encoder.input_dim)?;
        }
        Ok(())
    }

    /// Output directory, honoring the environment override.
    pub fn out_dir(&self) -> PathBuf {
        match std::env::var(OUT_DIR_ENV) {
            Ok(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from(&self.train.out_dir),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("serialize config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("parse config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// SHA-256 of the canonical TOML form.
    pub fn digest(&self) -> Result<[u8; 32]> {
        let text = self.to_toml()?;
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        Ok(h.finalize().into())
    }

    /// Apply a `key.path=value` override; the value is parsed as TOML.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
        let mut doc: toml::Value = toml::Value::try_from(&*self)
            .map_err(|e| Error::config(format!("serialize config: {e}")))?;
        let mut cursor = &mut doc;
        let parts: Vec<&str> = path.trim().split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = cursor
                .as_table_mut()
                .ok_or_else(|| Error::config(format!("{path}: not a table at {part}")))?;
            if i + 1 == parts.len() {
                let parsed: toml::Value = toml::from_str(&format!("v = {}", value.trim()))
                    .map(|t: toml::Table| t["v"].clone())
                    .or_else(|_| {
                        toml::from_str(&format!("v = {:?}", value.trim()))
                            .map(|t: toml::Table| t["v"].clone())
                    })
                    .map_err(|e| Error::config(format!("{path}: bad value {value:?}: {e}")))?;
                table.insert(part.to_string(), parsed);
            } else {
                cursor = table
                    .entry(part.to_string())
                    .or_insert(toml::Value::Table(Default::default()));
            }
        }
        *self = doc
            .try_into()
            .map_err(|e| Error::config(format!("override {assignment:?}: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back = TrainConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.digest().unwrap(), back.digest().unwrap());
    }

    #[test]
    fn overrides_hit_nested_keys() {
        let mut cfg = TrainConfig::default();
        cfg.apply_override("noise.alpha=0.05").unwrap();
        assert_eq!(cfg.noise.alpha, 0.05);
        cfg.apply_override("model.encoder.num_layers=3").unwrap();
        assert_eq!(cfg.model.encoder.num_layers, 3);
        cfg.apply_override("train.out_dir=\"runs/x\"").unwrap();
        assert_eq!(cfg.train.out_dir, "runs/x");
        // bare strings are quoted automatically
        cfg.apply_override("train.out_dir=runs/y").unwrap();
        assert_eq!(cfg.train.out_dir, "runs/y");
        assert!(cfg.apply_override("nonsense").is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = TrainConfig::default();
        let mut b = TrainConfig::default();
        b.noise.alpha = 0.02;
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
    }

    #[test]
    fn validation_catches_mismatched_dims() {
        let mut cfg = TrainConfig::default();
        cfg.data.synthetic.feat_dim = 9;
        assert!(cfg.validate().is_err());
    }
}
