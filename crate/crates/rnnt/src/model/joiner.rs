//! Joiner: projects encoder and predictor rows to a joint space, combines
//! them additively, applies tanh and a final projection to V+1 classes
//! (blank last). Optional Gaussian logit noise in training mode.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::{ModelParams, ParamGroup, ParamVars};
use crate::tensor::rng::RngStream;
use crate::tensor::tape::{Mode, Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct JoinerConfig {
    pub joint_dim: usize,
}

impl Default for JoinerConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl JoinerConfig {
    pub fn desk() -> Self {
        JoinerConfig { joint_dim: 64 }
    }

    /// The published profile: one linear layer of 1024 units.
    pub fn full_scale() -> Self {
        JoinerConfig { joint_dim: 1024 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.joint_dim == 0 {
            return Err(Error::config("joint_dim must be positive"));
        }
        Ok(())
    }
}

pub fn register_joiner_params(
    params: &mut ModelParams,
    cfg: &JoinerConfig,
    enc_dim: usize,
    pred_dim: usize,
    num_classes: usize,
    rng: &mut RngStream,
) -> Result<()> {
    cfg.validate()?;
    let j = cfg.joint_dim;
    params.register(
        "joiner.enc_proj.w",
        ParamGroup::Joiner,
        Tensor::randn(vec![enc_dim, j], 1.0 / (enc_dim as Real).sqrt(), rng),
    )?;
    params.register(
        "joiner.enc_proj.b",
        ParamGroup::Joiner,
        Tensor::zeros(vec![j]),
    )?;
    params.register(
        "joiner.pred_proj.w",
        ParamGroup::Joiner,
        Tensor::randn(vec![pred_dim, j], 1.0 / (pred_dim as Real).sqrt(), rng),
    )?;
    params.register(
        "joiner.pred_proj.b",
        ParamGroup::Joiner,
        Tensor::zeros(vec![j]),
    )?;
    params.register(
        "joiner.out.w",
        ParamGroup::Joiner,
        Tensor::randn(vec![j, num_classes], 1.0 / (j as Real).sqrt(), rng),
    )?;
    params.register(
        "joiner.out.b",
        ParamGroup::Joiner,
        Tensor::zeros(vec![num_classes]),
    )?;
    Ok(())
}

/// Pre-softmax logits for every (frame, history) pair: [T, U+1, V+1].
#[allow(clippy::too_many_arguments)]
pub fn joiner_forward(
    tape: &mut Tape,
    enc: Var,
    pred: Var,
    pv: &ParamVars,
    cfg: &JoinerConfig,
    num_classes: usize,
    logit_noise_std: Real,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<Var> {
    if logit_noise_std < 0.0 {
        return Err(Error::config("logit noise stddev must be >= 0"));
    }
    let t_len = tape.shape(enc)[0];
    let u_len = tape.shape(pred)[0];

    let ew = pv.get("joiner.enc_proj.w")?;
    let eb = pv.get("joiner.enc_proj.b")?;
    let pw = pv.get("joiner.pred_proj.w")?;
    let pb = pv.get("joiner.pred_proj.b")?;
    let e0 = tape.matmul(enc, ew).map_err(|_| {
        Error::config(format!(
            "joiner: encoder rows of width {} do not match enc_proj {:?}",
            tape.shape(enc)[1],
            tape.shape(ew)
        ))
    })?;
    let e = tape.add_row(e0, eb)?;
    let p0 = tape.matmul(pred, pw).map_err(|_| {
        Error::config(format!(
            "joiner: predictor rows of width {} do not match pred_proj {:?}",
            tape.shape(pred)[1],
            tape.shape(pw)
        ))
    })?;
    let p = tape.add_row(p0, pb)?;

    let joint = tape.outer_add(e, p)?;
    let act = tape.tanh(joint);
    let flat = tape.reshape(act, vec![t_len * u_len, cfg.joint_dim])?;
    let ow = pv.get("joiner.out.w")?;
    let ob = pv.get("joiner.out.b")?;
    let y0 = tape.matmul(flat, ow)?;
    let y = tape.add_row(y0, ob)?;
    let mut logits = tape.reshape(y, vec![t_len, u_len, num_classes])?;

    if mode == Mode::Train && logit_noise_std > 0.0 {
        let mut noise = vec![0.0f64; t_len * u_len * num_classes];
        rng.fill_gaussian(&mut noise);
        let scaled: Vec<Real> = noise
            .into_iter()
            .map(|x| x as Real * logit_noise_std)
            .collect();
        let n = tape.constant_from(vec![t_len, u_len, num_classes], scaled);
        logits = tape.add(logits, n)?;
    }
    Ok(logits)
}

/// Logits for a single (enc row, pred row) pair: [1, V+1]. Decode-time path.
pub fn joiner_single(
    tape: &mut Tape,
    enc_row: Var,
    pred_row: Var,
    pv: &ParamVars,
    cfg: &JoinerConfig,
    num_classes: usize,
) -> Result<Var> {
    let mut rng = RngStream::new(0);
    let out = joiner_forward(
        tape,
        enc_row,
        pred_row,
        pv,
        cfg,
        num_classes,
        0.0,
        Mode::Eval,
        &mut rng,
    )?;
    tape.reshape(out, vec![1, num_classes])
}
