//! Simplified Emformer encoder: streaming segments with cached left-context
//! keys/values and one right-context (look-ahead) segment. No memory bank;
//! the summary-query path is permanently disabled (the cell processes a
//! long enough segment per step that distant history is not summarized).
//!
//! Per layer, for segment i with center C and right context R:
//!   [C^, R^]   = LayerNorm([C, R])
//!   K          = [K_cache, W_k C, W_k R]     (projections of the raw inputs)
//!   V          = [V_cache, W_v C, W_v R]
//!   Z          = Attn(W_q [C^, R^], K, V) + [C, R]
//!   out        = LayerNorm(FFN(LayerNorm(Z)) + Z)
//! The cache then absorbs this segment's center keys/values, evicting
//! segments beyond the left-context budget.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::{ModelParams, ParamGroup, ParamVars};
use crate::tensor::rng::RngStream;
use crate::tensor::tape::{Mode, Tape, Var};
use crate::tensor::{Real, Tensor};

pub const LAYER_NORM_EPS: Real = 1e-5;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EmformerConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    /// Frames per streaming segment.
    pub segment_length: usize,
    /// Look-ahead, in segments. Only 1 is supported.
    pub right_context_segments: usize,
    /// Left-context cache budget, in segments.
    pub left_context_segments: usize,
    pub dropout_p: Real,
    /// Feature dimension entering the input projection.
    pub input_dim: usize,
    /// Encoder output dimension leaving the output projection.
    pub output_dim: usize,
}

impl Default for EmformerConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl EmformerConfig {
    /// Small profile used by the test and experiment suites.
    pub fn desk() -> Self {
        EmformerConfig {
            num_layers: 2,
            d_model: 64,
            num_heads: 4,
            ffn_dim: 256,
            segment_length: 4,
            right_context_segments: 1,
            left_context_segments: 8,
            dropout_p: 0.1,
            input_dim: 16,
            output_dim: 64,
        }
    }

    /// The published full-scale profile (20 layers, 512 wide, 8 heads,
    /// 2048 FFN, 160 ms segments at a 10 ms frame shift).
    pub fn full_scale() -> Self {
        EmformerConfig {
            num_layers: 20,
            d_model: 512,
            num_heads: 8,
            ffn_dim: 2048,
            segment_length: 16,
            right_context_segments: 1,
            left_context_segments: 8,
            dropout_p: 0.1,
            input_dim: 80,
            output_dim: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} must be a positive multiple of num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.segment_length == 0 {
            return Err(Error::config("segment_length must be >= 1"));
        }
        if self.right_context_segments != 1 {
            return Err(Error::config(
                "only right_context_segments = 1 is supported",
            ));
        }
        if self.num_layers == 0 {
            return Err(Error::config("encoder needs at least one layer"));
        }
        Ok(())
    }

    /// Right-context width in frames.
    pub fn right_context_frames(&self) -> usize {
        self.right_context_segments * self.segment_length
    }
}

/// Cached left-context keys/values for one layer. Entries are tape handles,
/// so a state is only meaningful for the tape the utterance is running on.
#[derive(Debug, Default)]
pub struct EmformerLayerState {
    cache: VecDeque<(Var, Var)>,
    pub segments_seen: usize,
}

impl EmformerLayerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cached_segments(&self) -> usize {
        self.cache.len()
    }
}

/// Multi-head scaled dot-product attention. Rows of `q` attend over all
/// rows of `k`/`v`; heads are column blocks.
pub fn multi_head_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    num_heads: usize,
) -> Result<Var> {
    let d = tape.shape(q)[1];
    if d % num_heads != 0 {
        return Err(Error::config(format!(
            "attention width {d} not divisible by {num_heads} heads"
        )));
    }
    let dh = d / num_heads;
    let scale = 1.0 / (dh as Real).sqrt();
    let mut outs = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let qh = tape.slice_cols(q, h * dh, (h + 1) * dh)?;
        let kh = tape.slice_cols(k, h * dh, (h + 1) * dh)?;
        let vh = tape.slice_cols(v, h * dh, (h + 1) * dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scaled = tape.scale(scores, scale);
        let probs = tape.softmax(scaled)?;
        outs.push(tape.matmul(probs, vh)?);
    }
    tape.concat_cols(&outs)
}

fn ln(tape: &mut Tape, x: Var, pv: &ParamVars, prefix: &str) -> Result<Var> {
    let gain = pv.get(&format!("{prefix}.gain"))?;
    let bias = pv.get(&format!("{prefix}.bias"))?;
    tape.layer_norm(x, gain, bias, LAYER_NORM_EPS)
}

/// One Emformer layer.
#[derive(Debug, Clone)]
pub struct EmformerLayer {
    pub index: usize,
}

impl EmformerLayer {
    fn name(&self, part: &str) -> String {
        format!("encoder.layer{}.{part}", self.index)
    }

    pub fn register_params(
        &self,
        params: &mut ModelParams,
        cfg: &EmformerConfig,
        rng: &mut RngStream,
    ) -> Result<()> {
        let d = cfg.d_model;
        let scale = 1.0 / (d as Real).sqrt();
        for w in ["attn.wq", "attn.wk", "attn.wv"] {
            params.register(
                &self.name(w),
                ParamGroup::Encoder,
                Tensor::randn(vec![d, d], scale, rng),
            )?;
        }
        for lnp in ["ln1", "ln2", "ln3"] {
            params.register(
                &self.name(&format!("{lnp}.gain")),
                ParamGroup::Encoder,
                Tensor::filled(vec![d], 1.0),
            )?;
            params.register(
                &self.name(&format!("{lnp}.bias")),
                ParamGroup::Encoder,
                Tensor::zeros(vec![d]),
            )?;
        }
        params.register(
            &self.name("ffn.w1"),
            ParamGroup::Encoder,
            Tensor::randn(vec![d, cfg.ffn_dim], scale, rng),
        )?;
        params.register(
            &self.name("ffn.b1"),
            ParamGroup::Encoder,
            Tensor::zeros(vec![cfg.ffn_dim]),
        )?;
        params.register(
            &self.name("ffn.w2"),
            ParamGroup::Encoder,
            Tensor::randn(vec![cfg.ffn_dim, d], 1.0 / (cfg.ffn_dim as Real).sqrt(), rng),
        )?;
        params.register(
            &self.name("ffn.b2"),
            ParamGroup::Encoder,
            Tensor::zeros(vec![d]),
        )?;
        Ok(())
    }

    /// Process one (center, right-context) segment pair. `seg_idx` must be
    /// the next unseen segment for this state.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        c: Var,
        r: Var,
        seg_idx: usize,
        state: &mut EmformerLayerState,
        pv: &ParamVars,
        cfg: &EmformerConfig,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(Var, Var)> {
        if seg_idx != state.segments_seen {
            return Err(Error::state(format!(
                "streaming order violated: segment {seg_idx} offered to a state at segment {}",
                state.segments_seen
            )));
        }
        let seg_rows = tape.shape(c)[0];

        let wq = pv.get(&self.name("attn.wq"))?;
        let wk = pv.get(&self.name("attn.wk"))?;
        let wv = pv.get(&self.name("attn.wv"))?;

        // Joint input LayerNorm over [C, R]; queries come from the
        // normalized rows, keys/values from the raw inputs.
        let x = tape.concat_rows(&[c, r])?;
        let xn = ln(tape, x, pv, &self.name("ln1"))?;

        let kc = tape.matmul(c, wk)?;
        let kr = tape.matmul(r, wk)?;
        let vc = tape.matmul(c, wv)?;
        let vr = tape.matmul(r, wv)?;

        let mut k_parts: Vec<Var> = state.cache.iter().map(|&(k, _)| k).collect();
        let mut v_parts: Vec<Var> = state.cache.iter().map(|&(_, v)| v).collect();
        k_parts.extend([kc, kr]);
        v_parts.extend([vc, vr]);
        let keys = tape.concat_rows(&k_parts)?;
        let values = tape.concat_rows(&v_parts)?;

        let q = tape.matmul(xn, wq)?;
        let attn = multi_head_attention(tape, q, keys, values, cfg.num_heads)?;
        let attn = tape.dropout(attn, cfg.dropout_p, mode, rng)?;
        let z = tape.add(attn, x)?;

        let zn = ln(tape, z, pv, &self.name("ln2"))?;
        let w1 = pv.get(&self.name("ffn.w1"))?;
        let b1 = pv.get(&self.name("ffn.b1"))?;
        let w2 = pv.get(&self.name("ffn.w2"))?;
        let b2 = pv.get(&self.name("ffn.b2"))?;
        let h0 = tape.matmul(zn, w1)?;
        let h1 = tape.add_row(h0, b1)?;
        let h = tape.relu(h1);
        let f0 = tape.matmul(h, w2)?;
        let f1 = tape.add_row(f0, b2)?;
        let f = tape.dropout(f1, cfg.dropout_p, mode, rng)?;
        let res = tape.add(f, z)?;
        let out = ln(tape, res, pv, &self.name("ln3"))?;

        let c_out = tape.slice_rows(out, 0, seg_rows)?;
        let r_out = tape.slice_rows(out, seg_rows, tape.shape(out)[0])?;

        state.cache.push_back((kc, vc));
        while state.cache.len() > cfg.left_context_segments {
            state.cache.pop_front();
        }
        state.segments_seen += 1;
        Ok((c_out, r_out))
    }
}

/// Register every encoder parameter (input/output projections plus layers).
pub fn register_encoder_params(
    params: &mut ModelParams,
    cfg: &EmformerConfig,
    rng: &mut RngStream,
) -> Result<()> {
    cfg.validate()?;
    params.register(
        "encoder.input_proj.w",
        ParamGroup::Encoder,
        Tensor::randn(
            vec![cfg.input_dim, cfg.d_model],
            1.0 / (cfg.input_dim as Real).sqrt(),
            rng,
        ),
    )?;
    params.register(
        "encoder.input_proj.b",
        ParamGroup::Encoder,
        Tensor::zeros(vec![cfg.d_model]),
    )?;
    for i in 0..cfg.num_layers {
        EmformerLayer { index: i }.register_params(params, cfg, rng)?;
    }
    params.register(
        "encoder.output_proj.w",
        ParamGroup::Encoder,
        Tensor::randn(
            vec![cfg.d_model, cfg.output_dim],
            1.0 / (cfg.d_model as Real).sqrt(),
            rng,
        ),
    )?;
    params.register(
        "encoder.output_proj.b",
        ParamGroup::Encoder,
        Tensor::zeros(vec![cfg.output_dim]),
    )?;
    Ok(())
}

/// Streaming encoder forward: input projection, segment-by-segment Emformer
/// layers with one look-ahead segment, output projection. Output keeps the
/// input frame count (no time subsampling).
pub fn encoder_forward(
    tape: &mut Tape,
    features: Var,
    pv: &ParamVars,
    cfg: &EmformerConfig,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<Var> {
    let shape = tape.shape(features).to_vec();
    if shape.len() != 2 || shape[1] != cfg.input_dim {
        return Err(Error::config(format!(
            "encoder expected [T, {}] features, got {shape:?}",
            cfg.input_dim
        )));
    }
    let t_len = shape[0];
    if t_len == 0 {
        return Err(Error::data("encoder_forward: empty feature matrix"));
    }
    let d = cfg.d_model;
    let seg = cfg.segment_length;
    let rc = cfg.right_context_frames();

    let w_in = pv.get("encoder.input_proj.w")?;
    let b_in = pv.get("encoder.input_proj.b")?;
    let x0 = tape.matmul(features, w_in)?;
    let x = tape.add_row(x0, b_in)?;

    let num_segments = t_len.div_ceil(seg);
    let mut states: Vec<EmformerLayerState> = (0..cfg.num_layers)
        .map(|_| EmformerLayerState::new())
        .collect();
    let layers: Vec<EmformerLayer> = (0..cfg.num_layers)
        .map(|index| EmformerLayer { index })
        .collect();

    let mut outputs = Vec::with_capacity(num_segments);
    for i in 0..num_segments {
        let c0 = i * seg;
        let c1 = ((i + 1) * seg).min(t_len);
        let mut c = tape.slice_rows(x, c0, c1)?;

        // Look-ahead: the first rc frames after this segment, zero-padded
        // past the end of the utterance.
        let r0 = (i + 1) * seg;
        let r1 = (r0 + rc).min(t_len);
        let mut r = if r0 >= t_len {
            tape.zeros_const(vec![rc, d])
        } else {
            let body = tape.slice_rows(x, r0, r1)?;
            let pad = rc - (r1 - r0);
            if pad == 0 {
                body
            } else {
                let zeros = tape.zeros_const(vec![pad, d]);
                tape.concat_rows(&[body, zeros])?
            }
        };

        for (layer, state) in layers.iter().zip(states.iter_mut()) {
            let (c_out, r_out) = layer.forward(tape, c, r, i, state, pv, cfg, mode, rng)?;
            c = c_out;
            r = r_out;
        }
        outputs.push(c);
    }

    let h = tape.concat_rows(&outputs)?;
    let w_out = pv.get("encoder.output_proj.w")?;
    let b_out = pv.get("encoder.output_proj.b")?;
    let y0 = tape.matmul(h, w_out)?;
    tape.add_row(y0, b_out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> EmformerConfig {
        EmformerConfig {
            num_layers: 1,
            d_model: 8,
            num_heads: 2,
            ffn_dim: 16,
            segment_length: 4,
            right_context_segments: 1,
            left_context_segments: 8,
            dropout_p: 0.0,
            input_dim: 8,
            output_dim: 8,
        }
    }

    fn forward_all(
        cfg: &EmformerConfig,
        params: &ModelParams,
        feat: &Tensor,
        mode: Mode,
        seed: u64,
    ) -> Tensor {
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let f = tape.constant(feat);
        let mut rng = RngStream::new(seed);
        let out = encoder_forward(&mut tape, f, &pv, cfg, mode, &mut rng).unwrap();
        tape.to_tensor(out)
    }

    #[test]
    fn output_shape_and_finiteness() {
        let cfg = tiny_cfg();
        let mut rng = RngStream::new(2);
        let mut params = ModelParams::new();
        register_encoder_params(&mut params, &cfg, &mut rng).unwrap();
        let feat = Tensor::randn(vec![10, 8], 1.0, &mut rng);
        let out = forward_all(&cfg, &params, &feat, Mode::Eval, 0);
        assert_eq!(out.shape(), &[10, 8]);
        assert!(out.all_finite());
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let cfg = tiny_cfg();
        let mut rng = RngStream::new(3);
        let mut params = ModelParams::new();
        register_encoder_params(&mut params, &cfg, &mut rng).unwrap();
        let feat = Tensor::randn(vec![8, 8], 1.0, &mut rng);
        let a = forward_all(&cfg, &params, &feat, Mode::Eval, 0);
        let b = forward_all(&cfg, &params, &feat, Mode::Eval, 99);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn zero_attention_and_ffn_reduce_to_normalized_input() {
        // With W_q = W_k = W_v = 0 every attention row is the uniform average
        // of zero values, and with FFN weights zero the layer collapses to
        // LayerNorm of the raw input rows.
        let cfg = tiny_cfg();
        let mut rng = RngStream::new(4);
        let mut params = ModelParams::new();
        register_encoder_params(&mut params, &cfg, &mut rng).unwrap();
        for name in [
            "encoder.layer0.attn.wq",
            "encoder.layer0.attn.wk",
            "encoder.layer0.attn.wv",
            "encoder.layer0.ffn.w1",
            "encoder.layer0.ffn.w2",
        ] {
            params
                .tensor_mut(name)
                .unwrap()
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = 0.0);
        }

        let seg = cfg.segment_length;
        let c_in = Tensor::randn(vec![seg, cfg.d_model], 1.0, &mut rng);
        let r_in = Tensor::randn(vec![seg, cfg.d_model], 1.0, &mut rng);

        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let c = tape.constant(&c_in);
        let r = tape.constant(&r_in);
        let mut state = EmformerLayerState::new();
        let mut drng = RngStream::new(0);
        let layer = EmformerLayer { index: 0 };
        let (c_out, _r_out) = layer
            .forward(&mut tape, c, r, 0, &mut state, &pv, &cfg, Mode::Eval, &mut drng)
            .unwrap();

        // expected: LayerNorm(0 + [C, R]) restricted to the center rows
        let x = tape.constant(&c_in);
        let g = pv.get("encoder.layer0.ln3.gain").unwrap();
        let b = pv.get("encoder.layer0.ln3.bias").unwrap();
        let expect = tape.layer_norm(x, g, b, LAYER_NORM_EPS).unwrap();
        let diff = crate::tensor::max_abs_diff(tape.value(c_out), tape.value(expect));
        assert!(diff <= 1e-12, "diff {diff}");
    }

    #[test]
    fn streaming_order_enforced() {
        let cfg = tiny_cfg();
        let mut rng = RngStream::new(5);
        let mut params = ModelParams::new();
        register_encoder_params(&mut params, &cfg, &mut rng).unwrap();
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let c = tape.zeros_const(vec![4, 8]);
        let r = tape.zeros_const(vec![4, 8]);
        let mut state = EmformerLayerState::new();
        let mut drng = RngStream::new(0);
        let layer = EmformerLayer { index: 0 };
        layer
            .forward(&mut tape, c, r, 0, &mut state, &pv, &cfg, Mode::Eval, &mut drng)
            .unwrap();
        let err = layer
            .forward(&mut tape, c, r, 3, &mut state, &pv, &cfg, Mode::Eval, &mut drng)
            .unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn cache_respects_left_context_budget() {
        let mut cfg = tiny_cfg();
        cfg.left_context_segments = 2;
        let mut rng = RngStream::new(6);
        let mut params = ModelParams::new();
        register_encoder_params(&mut params, &cfg, &mut rng).unwrap();
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let mut state = EmformerLayerState::new();
        let mut drng = RngStream::new(0);
        let layer = EmformerLayer { index: 0 };
        for i in 0..5 {
            let c = tape.zeros_const(vec![4, 8]);
            let r = tape.zeros_const(vec![4, 8]);
            layer
                .forward(&mut tape, c, r, i, &mut state, &pv, &cfg, Mode::Eval, &mut drng)
                .unwrap();
        }
        assert_eq!(state.cached_segments(), 2);
    }

    #[test]
    fn feature_dim_mismatch_is_config_error() {
        let cfg = tiny_cfg();
        let mut rng = RngStream::new(7);
        let mut params = ModelParams::new();
        register_encoder_params(&mut params, &cfg, &mut rng).unwrap();
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let feat = tape.zeros_const(vec![8, 5]);
        let mut drng = RngStream::new(0);
        assert!(matches!(
            encoder_forward(&mut tape, feat, &pv, &cfg, Mode::Eval, &mut drng),
            Err(Error::Config(_))
        ));
    }
}
