//! Training/evaluation data items.

use crate::tensor::Tensor;

/// One utterance: feature matrix [T, feat_dim], label ids, and (for
/// synthetic data) the ground-truth frame at which each label ends, used to
/// build alignment-restriction bands.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: usize,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub alignment: Option<Vec<usize>>,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.features.rows()
    }
}
