//! Pruning-aware training: 8x1 block magnitude masks grown along a cubic
//! sparsity schedule, applied to encoder weight matrices only. Masks only
//! ever grow; once a block is zeroed it stays zeroed for the rest of the
//! run. Dropout on the encoder is co-scaled with the achieved sparsity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::{ModelParams, ParamGroup};
use crate::tensor::Real;

/// Rows per block: 8 consecutive input-dimension rows within one column.
pub const BLOCK_ROWS: usize = 8;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PruneSchedule {
    /// Final target sparsity in [0, 1). 0 disables pruning.
    pub target: Real,
    /// First pruning step.
    pub t0: u64,
    /// Number of pruning updates.
    pub n: u64,
    /// Steps between pruning updates.
    pub delta_t: u64,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        // Desk-scale defaults; the published setting uses n = delta_t = 256.
        PruneSchedule {
            target: 0.0,
            t0: 40,
            n: 8,
            delta_t: 20,
        }
    }
}

impl PruneSchedule {
    pub fn full_scale(target: Real) -> Self {
        PruneSchedule {
            target,
            t0: 0,
            n: 256,
            delta_t: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.target) {
            return Err(Error::config(format!(
                "prune target {} must be in [0, 1)",
                self.target
            )));
        }
        if self.target > 0.0 && (self.n == 0 || self.delta_t == 0) {
            return Err(Error::config("prune schedule needs n >= 1 and delta_t >= 1"));
        }
        Ok(())
    }

    pub fn enabled(&self) -> bool {
        self.target > 0.0
    }

    /// True when step `t` is one of the scheduled update steps.
    pub fn is_update_step(&self, t: u64) -> bool {
        self.enabled()
            && t >= self.t0
            && t <= self.t0 + self.n * self.delta_t
            && (t - self.t0) % self.delta_t == 0
    }
}

/// Cubic sparsity ramp: 0 at t0, the final target at t0 + n*delta_t,
/// s_f * (1 - (1 - (t-t0)/(n*delta_t))^3) between, clamped outside.
pub fn schedule_sparsity(t: u64, sched: &PruneSchedule) -> Real {
    if !sched.enabled() || t <= sched.t0 {
        return 0.0;
    }
    let span = sched.n * sched.delta_t;
    if t >= sched.t0 + span {
        return sched.target;
    }
    let frac = (t - sched.t0) as Real / span as Real;
    sched.target * (1.0 - (1.0 - frac).powi(3))
}

/// Encoder dropout co-scaling: base_p * (1 - sparsity).
pub fn scaled_dropout(base_p: Real, sparsity: Real) -> Real {
    base_p * (1.0 - sparsity)
}

/// Binary mask over one weight matrix with 8x1 block granularity. Blocks
/// run down the input (row) dimension within a single column; a matrix
/// whose row count is not a multiple of 8 gets a shorter final block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMask {
    rows: usize,
    cols: usize,
    /// Dense 0/1 values, same layout as the weights.
    mask: Vec<Real>,
    /// Zeroed flag per (block_row, col) block, row-major over blocks.
    zeroed: Vec<bool>,
}

impl BlockMask {
    pub fn all_ones(rows: usize, cols: usize) -> Self {
        let blocks_per_col = rows.div_ceil(BLOCK_ROWS);
        BlockMask {
            rows,
            cols,
            mask: vec![1.0; rows * cols],
            zeroed: vec![false; blocks_per_col * cols],
        }
    }

    /// Rebuild a mask from its per-block zeroed flags (checkpoint load).
    pub fn from_zeroed(rows: usize, cols: usize, zeroed: &[bool]) -> Result<Self> {
        let mut mask = BlockMask::all_ones(rows, cols);
        if zeroed.len() != mask.zeroed.len() {
            return Err(Error::config(format!(
                "mask block count {} does not match {}x{} layout",
                zeroed.len(),
                rows,
                cols
            )));
        }
        for (i, &z) in zeroed.iter().enumerate() {
            if z {
                mask.zero_block(i / cols, i % cols);
            }
        }
        Ok(mask)
    }

    pub fn zeroed_flags(&self) -> &[bool] {
        &self.zeroed
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[Real] {
        &self.mask
    }

    pub fn blocks_per_col(&self) -> usize {
        self.rows.div_ceil(BLOCK_ROWS)
    }

    pub fn num_blocks(&self) -> usize {
        self.zeroed.len()
    }

    pub fn zeroed_blocks(&self) -> usize {
        self.zeroed.iter().filter(|z| **z).count()
    }

    /// Fraction of zero weights under the current mask.
    pub fn sparsity(&self) -> Real {
        let zeros = self.mask.iter().filter(|m| **m == 0.0).count();
        zeros as Real / self.mask.len() as Real
    }

    fn block_rows_range(&self, block_row: usize) -> std::ops::Range<usize> {
        let r0 = block_row * BLOCK_ROWS;
        r0..(r0 + BLOCK_ROWS).min(self.rows)
    }

    fn zero_block(&mut self, block_row: usize, col: usize) {
        self.zeroed[block_row * self.cols + col] = true;
        for r in self.block_rows_range(block_row) {
            self.mask[r * self.cols + col] = 0.0;
        }
    }

    fn is_zeroed(&self, block_row: usize, col: usize) -> bool {
        self.zeroed[block_row * self.cols + col]
    }

    /// L2 norm of the weights under one block.
    fn block_norm(&self, w: &[Real], block_row: usize, col: usize) -> Real {
        self.block_rows_range(block_row)
            .map(|r| w[r * self.cols + col].powi(2))
            .sum::<Real>()
            .sqrt()
    }
}

/// Per-matrix masks for the encoder, keyed by parameter name. BTreeMap
/// iteration keeps mask updates and reports deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaskSet {
    pub masks: BTreeMap<String, BlockMask>,
    /// Sparsity target the masks were last grown to.
    pub current_target: Real,
}

impl MaskSet {
    /// All-ones masks over every encoder weight matrix.
    pub fn for_encoder(params: &ModelParams) -> Self {
        let mut masks = BTreeMap::new();
        for e in params.matrices_in(ParamGroup::Encoder) {
            masks.insert(
                e.name.clone(),
                BlockMask::all_ones(e.tensor.rows(), e.tensor.cols()),
            );
        }
        MaskSet {
            masks,
            current_target: 0.0,
        }
    }

    pub fn mask_for(&self, name: &str) -> Option<&BlockMask> {
        self.masks.get(name)
    }

    /// Achieved sparsity across all masked matrices (weight-level count).
    pub fn global_sparsity(&self) -> Real {
        let mut zeros = 0usize;
        let mut total = 0usize;
        for m in self.masks.values() {
            zeros += m.values().iter().filter(|v| **v == 0.0).count();
            total += m.values().len();
        }
        if total == 0 {
            0.0
        } else {
            zeros as Real / total as Real
        }
    }

    /// Per-matrix sparsity report lines: (name, zeroed blocks, total blocks, sparsity).
    pub fn report(&self) -> Vec<(String, usize, usize, Real)> {
        self.masks
            .iter()
            .map(|(n, m)| (n.clone(), m.zeroed_blocks(), m.num_blocks(), m.sparsity()))
            .collect()
    }
}

/// Grow masks to `target` sparsity: per matrix, zero the lowest-norm live
/// blocks until floor(target * block_count) blocks are zeroed. Previously
/// zeroed blocks stay zeroed; ties break on ascending block index.
pub fn update_masks(params: &ModelParams, target: Real, masks: &mut MaskSet) -> Result<()> {
    if target < masks.current_target {
        return Err(Error::config(format!(
            "prune target decreased from {} to {target}",
            masks.current_target
        )));
    }
    for (name, mask) in masks.masks.iter_mut() {
        let w = params.tensor(name)?;
        let total_blocks = mask.num_blocks();
        let want_zeroed = ((target * total_blocks as Real).floor() as usize).min(total_blocks);
        let have_zeroed = mask.zeroed_blocks();
        if want_zeroed <= have_zeroed {
            continue;
        }
        // score live blocks by current weight norm
        let mut live: Vec<(Real, usize, usize)> = Vec::new();
        for br in 0..mask.blocks_per_col() {
            for c in 0..mask.shape().1 {
                if !mask.is_zeroed(br, c) {
                    live.push((mask.block_norm(w.data(), br, c), br, c));
                }
            }
        }
        live.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("finite block norms")
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        for &(_, br, c) in live.iter().take(want_zeroed - have_zeroed) {
            mask.zero_block(br, c);
        }
    }
    masks.current_target = target;
    Ok(())
}

/// Zero masked weights in place. Run after every optimizer update so the
/// zeros persist through training.
pub fn apply_masks(params: &mut ModelParams, masks: &MaskSet) -> Result<()> {
    for (name, mask) in &masks.masks {
        let w = params.tensor_mut(name)?;
        if (w.rows(), w.cols()) != mask.shape() {
            return Err(Error::config(format!(
                "mask shape {:?} does not match {name} {:?}",
                mask.shape(),
                w.shape()
            )));
        }
        for (v, m) in w.data_mut().iter_mut().zip(mask.values()) {
            if *m == 0.0 {
                *v = 0.0;
            }
        }
    }
    Ok(())
}
