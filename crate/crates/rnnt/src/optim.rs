//! Plain SGD with optional momentum. Masked (pruned) weights receive no
//! updates and are re-zeroed after every step.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::params::{GradMap, ModelParams};
use crate::prune::MaskSet;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: Real,
    pub momentum: Real,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 0.05,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub cfg: OptimizerConfig,
    velocity: BTreeMap<String, Vec<Real>>,
}

impl Sgd {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Sgd {
            cfg,
            velocity: BTreeMap::new(),
        }
    }

    /// v = momentum * v + g; w -= lr * v. Gradients at masked weights are
    /// discarded and masked weights re-zeroed afterwards.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &GradMap,
        masks: Option<&MaskSet>,
    ) -> Result<()> {
        for (name, g) in grads {
            let mask = masks.and_then(|m| m.mask_for(name));
            let tensor = params.tensor_mut(name)?;
            let data = tensor.data_mut();
            if self.cfg.momentum == 0.0 {
                for (i, w) in data.iter_mut().enumerate() {
                    let gi = match mask {
                        Some(m) if m.values()[i] == 0.0 => 0.0,
                        _ => g[i],
                    };
                    *w -= self.cfg.lr * gi;
                }
            } else {
                let v = self
                    .velocity
                    .entry(name.clone())
                    .or_insert_with(|| vec![0.0; g.len()]);
                for (i, w) in data.iter_mut().enumerate() {
                    let gi = match mask {
                        Some(m) if m.values()[i] == 0.0 => 0.0,
                        _ => g[i],
                    };
                    v[i] = self.cfg.momentum * v[i] + gi;
                    *w -= self.cfg.lr * v[i];
                }
            }
            if let Some(m) = mask {
                for (w, mv) in data.iter_mut().zip(m.values()) {
                    if *mv == 0.0 {
                        *w = 0.0;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn velocity(&self) -> &BTreeMap<String, Vec<Real>> {
        &self.velocity
    }

    pub fn set_velocity(&mut self, v: BTreeMap<String, Vec<Real>>) {
        self.velocity = v;
    }
}
