//! SpecAugment: one frequency mask plus several time masks, all widths
//! drawn uniformly, masked cells set to zero.

use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::tensor::rng::RngStream;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SpecAugmentConfig {
    /// Frequency mask parameter F: mask width ~ Uniform{0..=F} channels.
    pub freq_mask_param: usize,
    /// Number of time masks.
    pub num_time_masks: usize,
    /// Each time mask width ~ Uniform{0..=floor(ratio * T)} frames.
    pub max_time_mask_ratio: Real,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        // the published setting: F=27, 10 time masks, p=0.05
        SpecAugmentConfig {
            freq_mask_param: 27,
            num_time_masks: 10,
            max_time_mask_ratio: 0.05,
        }
    }
}

impl SpecAugmentConfig {
    pub fn disabled() -> Self {
        SpecAugmentConfig {
            freq_mask_param: 0,
            num_time_masks: 0,
            max_time_mask_ratio: 0.0,
        }
    }

    pub fn validate(&self, n_channels: usize) -> Result<()> {
        if self.freq_mask_param > n_channels {
            return Err(Error::config(format!(
                "freq_mask_param {} exceeds {n_channels} channels",
                self.freq_mask_param
            )));
        }
        if !(0.0..=1.0).contains(&self.max_time_mask_ratio) {
            return Err(Error::config("max_time_mask_ratio must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Apply one frequency mask and `num_time_masks` time masks. Unmasked cells
/// are bit-identical to the input; masked cells become 0.
pub fn spec_augment(
    feat: &FeatureMatrix,
    cfg: &SpecAugmentConfig,
    rng: &mut RngStream,
) -> Result<FeatureMatrix> {
    cfg.validate(feat.cols)?;
    let mut out = feat.clone();
    let t_len = feat.rows;
    let n_ch = feat.cols;

    if cfg.freq_mask_param > 0 && n_ch > 0 {
        let width = rng.next_below_inclusive(cfg.freq_mask_param as u64) as usize;
        let start = rng.next_below_inclusive((n_ch - width) as u64) as usize;
        for t in 0..t_len {
            for c in start..start + width {
                out.data[t * n_ch + c] = 0.0;
            }
        }
    }

    let max_width = (cfg.max_time_mask_ratio * t_len as Real).floor() as usize;
    for _ in 0..cfg.num_time_masks {
        let width = rng.next_below_inclusive(max_width as u64) as usize;
        let start = rng.next_below_inclusive((t_len - width) as u64) as usize;
        for t in start..start + width {
            for c in 0..n_ch {
                out.data[t * n_ch + c] = 0.0;
            }
        }
    }
    Ok(out)
}
