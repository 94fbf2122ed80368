//! Parameter-space noisy training with adaptive per-column noise scaling.
//!
//! Each training step draws one Gaussian perturbation for every 2-D weight
//! matrix in the targeted model components. For column w_j the noise is
//! scaled to norm alpha * ||w_j||, the scale treated as a constant (no
//! gradient flows through it: the perturbation is applied to the stored
//! weights before the tape is built, so the tape only ever sees perturbed
//! values as leaves). After the backward pass the original weights are
//! restored bit-exactly and the optimizer updates the clean weights with
//! the gradients taken at the perturbed point. The L2 penalty is evaluated
//! at the clean weights; its gradient is lambda * w independent of the
//! noise draw.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::loss::AlignmentBand;
use crate::model::params::{grad_map_axpy, GradMap, ModelParams, ParamGroup};
use crate::model::RnntModel;
use crate::optim::Sgd;
use crate::prune::MaskSet;
use crate::tensor::rng::RngStream;
use crate::tensor::tape::{Mode, NodeKind, Tape};
use crate::tensor::{Real, Tensor};

/// Sub-stream tags for the per-step RNG tree.
pub mod stream {
    pub const NOISE: u64 = 0x6e6f_6973_65;
    pub const DROPOUT: u64 = 0x6472_6f70;
    pub const LOGIT: u64 = 0x6c6f_6769_74;
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct NoiseConfig {
    /// Relative noise scale alpha; each perturbed column receives noise of
    /// norm alpha * ||w_j||.
    pub alpha: Real,
    /// Model components receiving weight noise.
    pub targets: BTreeSet<ParamGroup>,
    /// L2 coefficient lambda; the penalty is (lambda/2) ||w||^2 over the
    /// targeted components.
    pub lambda: Real,
    /// Stddev of Gaussian noise added to the joiner logits (0 disables).
    pub logit_std: Real,
    /// Seed for the noise stream.
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            alpha: 0.01,
            targets: all_targets(),
            lambda: 0.1,
            logit_std: 0.0,
            seed: 0,
        }
    }
}

pub fn all_targets() -> BTreeSet<ParamGroup> {
    [ParamGroup::Encoder, ParamGroup::Predictor, ParamGroup::Joiner].into()
}

impl NoiseConfig {
    /// Baseline configuration: no weight noise, no L2, no logit noise.
    pub fn disabled() -> Self {
        NoiseConfig {
            alpha: 0.0,
            targets: all_targets(),
            lambda: 0.0,
            logit_std: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(Error::config("noise alpha must be >= 0"));
        }
        if self.lambda < 0.0 {
            return Err(Error::config("noise lambda must be >= 0"));
        }
        if self.logit_std < 0.0 {
            return Err(Error::config("logit noise stddev must be >= 0"));
        }
        if self.alpha > 0.0 && self.targets.is_empty() {
            return Err(Error::config("noise targets empty while alpha > 0"));
        }
        Ok(())
    }
}

/// Per-column adaptive noise for one weight matrix: epsilon_j ~ N(0, I)
/// rescaled so ||noise_j|| = alpha * ||w_j|| exactly. Zero-norm columns
/// receive zero noise. When a block mask is supplied the raw draw is masked
/// before normalization, so masked rows stay exactly zero and the norm
/// equality still holds on the surviving rows.
pub fn sample_column_noise(
    w: &Tensor,
    alpha: Real,
    rng: &mut RngStream,
    mask: Option<&[Real]>,
) -> Result<Tensor> {
    if !w.is_matrix() {
        return Err(Error::ShapeMismatch {
            op: "sample_column_noise",
            lhs: w.shape().to_vec(),
            rhs: vec![],
        });
    }
    if alpha < 0.0 {
        return Err(Error::config("noise alpha must be >= 0"));
    }
    let (rows, cols) = (w.rows(), w.cols());
    let mut noise = Tensor::zeros(vec![rows, cols]);
    if alpha == 0.0 {
        return Ok(noise);
    }
    let mut eps = vec![0.0f64; rows];
    for j in 0..cols {
        let w_norm = (0..rows)
            .map(|i| w.data()[i * cols + j].powi(2))
            .sum::<Real>()
            .sqrt();
        // draw unconditionally to keep stream consumption independent of
        // the weight values
        rng.fill_gaussian(&mut eps);
        if w_norm == 0.0 {
            continue;
        }
        loop {
            if let Some(m) = mask {
                for i in 0..rows {
                    if m[i * cols + j] == 0.0 {
                        eps[i] = 0.0;
                    }
                }
            }
            let eps_norm = eps.iter().map(|x| x * x).sum::<f64>().sqrt();
            if eps_norm > 0.0 {
                let scale = alpha * w_norm / (eps_norm as Real);
                for i in 0..rows {
                    noise.data_mut()[i * cols + j] = scale * (eps[i] as Real);
                }
                break;
            }
            // probability-zero redraw path
            rng.fill_gaussian(&mut eps);
        }
    }
    Ok(noise)
}

/// The noise actually applied in one step, plus everything needed to undo
/// it bit-exactly.
#[derive(Debug)]
pub struct PerturbationRecord {
    entries: Vec<PerturbEntry>,
}

#[derive(Debug)]
pub struct PerturbEntry {
    pub name: String,
    original: Vec<Real>,
    pub noise: Vec<Real>,
}

impl PerturbationRecord {
    pub fn entries(&self) -> &[PerturbEntry] {
        &self.entries
    }

    pub fn noise_for(&self, name: &str) -> Option<&[Real]> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.noise.as_slice())
    }
}

/// Perturb every 2-D weight matrix in the targeted groups in place.
/// Exactly one outstanding record is allowed per registry.
pub fn perturb_params(
    params: &mut ModelParams,
    cfg: &NoiseConfig,
    rng: &mut RngStream,
    masks: Option<&MaskSet>,
) -> Result<PerturbationRecord> {
    cfg.validate()?;
    if params.perturbed {
        return Err(Error::state(
            "perturb_params: a perturbation is already outstanding",
        ));
    }
    let mut entries = Vec::new();
    if cfg.alpha > 0.0 {
        let names: Vec<String> = params
            .iter()
            .filter(|e| e.tensor.is_matrix() && cfg.targets.contains(&e.group))
            .map(|e| e.name.clone())
            .collect();
        for name in names {
            let mask = masks
                .and_then(|m| m.mask_for(&name))
                .map(|m| m.values().to_vec());
            let w = params.tensor(&name)?;
            let noise = sample_column_noise(w, cfg.alpha, rng, mask.as_deref())?;
            let original = w.data().to_vec();
            let w = params.tensor_mut(&name)?;
            for (v, n) in w.data_mut().iter_mut().zip(noise.data()) {
                *v += n;
            }
            entries.push(PerturbEntry {
                name,
                original,
                noise: noise.data().to_vec(),
            });
        }
    }
    params.perturbed = true;
    Ok(PerturbationRecord { entries })
}

/// Undo a perturbation, restoring the stored originals bit-exactly.
pub fn restore_params(params: &mut ModelParams, record: PerturbationRecord) -> Result<()> {
    if !params.perturbed {
        return Err(Error::state("restore_params: no outstanding perturbation"));
    }
    for e in &record.entries {
        let w = params.tensor_mut(&e.name)?;
        w.data_mut().copy_from_slice(&e.original);
    }
    params.perturbed = false;
    Ok(())
}

/// (lambda/2) sum ||w||^2 over all trainable tensors in the targeted
/// groups, with its analytic gradient lambda * w.
pub fn l2_penalty(
    params: &ModelParams,
    lambda: Real,
    targets: &BTreeSet<ParamGroup>,
) -> Result<(Real, GradMap)> {
    if lambda < 0.0 {
        return Err(Error::config("l2 lambda must be >= 0"));
    }
    let mut value = 0.0;
    let mut grads = GradMap::new();
    if lambda == 0.0 {
        return Ok((value, grads));
    }
    for e in params.iter().filter(|e| targets.contains(&e.group)) {
        value += 0.5 * lambda * e.tensor.data().iter().map(|x| x * x).sum::<Real>();
        grads.insert(
            e.name.clone(),
            e.tensor.data().iter().map(|x| lambda * x).collect(),
        );
    }
    Ok((value, grads))
}

/// Everything a training step reports back to the loop.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    /// Mean transducer loss over the batch plus the L2 penalty.
    pub loss: Real,
    /// Mean transducer loss alone.
    pub data_loss: Real,
    pub l2: Real,
}

/// Alignment-band buffers (left, right) in frames, applied when an
/// utterance carries a reference alignment.
pub type BandBuffers = Option<(usize, usize)>;

fn utterance_band(utt: &Utterance, buffers: BandBuffers) -> Result<Option<AlignmentBand>> {
    match (buffers, &utt.alignment) {
        (Some((bl, br)), Some(align)) if !align.is_empty() || !utt.labels.is_empty() => {
            if align.len() != utt.labels.len() {
                return Err(Error::data(format!(
                    "utterance {}: alignment has {} entries for {} labels",
                    utt.id,
                    align.len(),
                    utt.labels.len()
                )));
            }
            Ok(Some(AlignmentBand::from_alignment(
                align,
                utt.num_frames(),
                bl,
                br,
            )?))
        }
        _ => Ok(None),
    }
}

/// Forward + backward over a batch at the current (possibly perturbed)
/// weights. Returns the gradient map scaled to the batch mean and the mean
/// data loss.
fn batch_gradients(
    model: &RnntModel,
    params: &ModelParams,
    batch: &[Utterance],
    cfg: &NoiseConfig,
    band_buffers: BandBuffers,
    step_rng: &RngStream,
) -> Result<(GradMap, Real)> {
    let scale = 1.0 / batch.len() as Real;
    let mut acc = GradMap::new();
    let mut mean_loss = 0.0;
    for utt in batch {
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let mut utt_rng = step_rng.substream(stream::DROPOUT).substream(utt.id as u64);
        let band = utterance_band(utt, band_buffers)?;
        let loss = model.utterance_loss(
            &mut tape,
            &pv,
            &utt.features,
            &utt.labels,
            band.as_ref(),
            cfg.logit_std,
            Mode::Train,
            &mut utt_rng,
        )?;
        let value = tape.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite loss {value} on utterance {}",
                utt.id
            )));
        }
        tape.backward(loss)?;
        let grads = params.pull_grads(&tape, &pv);
        grad_map_axpy(&mut acc, &grads, scale);
        mean_loss += scale * value;
    }
    Ok((acc, mean_loss))
}

/// One optimizer step of noisy training: perturb the targeted weights with
/// a single fresh noise draw, take gradients of the batch loss at the
/// perturbed point, restore the clean weights exactly, add the L2 gradient
/// evaluated at the clean weights, and update. With alpha = 0 this is a
/// standard training step.
#[allow(clippy::too_many_arguments)]
pub fn noisy_training_step(
    model: &RnntModel,
    params: &mut ModelParams,
    batch: &[Utterance],
    cfg: &NoiseConfig,
    opt: &mut Sgd,
    masks: Option<&MaskSet>,
    band_buffers: BandBuffers,
    step_rng: &RngStream,
) -> Result<StepReport> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::config("training step on an empty batch"));
    }

    let mut noise_rng = step_rng.substream(stream::NOISE);
    let record = perturb_params(params, cfg, &mut noise_rng, masks)?;

    let forward = batch_gradients(model, params, batch, cfg, band_buffers, step_rng);
    restore_params(params, record)?;
    let (mut grads, data_loss) = forward?;

    let (l2_value, l2_grads) = l2_penalty(params, cfg.lambda, &cfg.targets)?;
    grad_map_axpy(&mut grads, &l2_grads, 1.0);

    opt.step(params, &grads, masks)?;

    Ok(StepReport {
        loss: data_loss + l2_value,
        data_loss,
        l2: l2_value,
    })
}

/// Structural summary of the tape built by a (possibly noisy) forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapeAudit {
    /// Gradient-tracked leaves: must equal the number of registered
    /// parameters (noise introduces no extra differentiable roots).
    pub grad_leaves: usize,
    /// Leaves not tracking gradients.
    pub frozen_leaves: usize,
    /// Explicit constants (features, dropout masks, logit noise, padding).
    pub constants: usize,
    pub interior: usize,
}

/// Build one noisy forward exactly the way a training step does and audit
/// the tape structure: the perturbation must enter through leaf values
/// only, never as a differentiable op.
pub fn audit_noisy_forward(
    model: &RnntModel,
    params: &mut ModelParams,
    utt: &Utterance,
    cfg: &NoiseConfig,
    step_rng: &RngStream,
) -> Result<TapeAudit> {
    let mut noise_rng = step_rng.substream(stream::NOISE);
    let record = perturb_params(params, cfg, &mut noise_rng, None)?;

    let mut tape = Tape::new();
    let pv = params.bind(&mut tape);
    let mut utt_rng = step_rng.substream(stream::DROPOUT).substream(utt.id as u64);
    let loss = model.utterance_loss(
        &mut tape,
        &pv,
        &utt.features,
        &utt.labels,
        None,
        cfg.logit_std,
        Mode::Train,
        &mut utt_rng,
    );
    restore_params(params, record)?;
    loss?;

    let mut audit = TapeAudit {
        grad_leaves: 0,
        frozen_leaves: 0,
        constants: 0,
        interior: 0,
    };
    for kind in tape.node_kinds() {
        match kind {
            NodeKind::Leaf { requires_grad: true } => audit.grad_leaves += 1,
            NodeKind::Leaf { requires_grad: false } => audit.frozen_leaves += 1,
            NodeKind::Constant => audit.constants += 1,
            NodeKind::Interior { .. } => audit.interior += 1,
        }
    }
    Ok(audit)
}
