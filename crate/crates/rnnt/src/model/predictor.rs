//! LSTM prediction network: embedding, LSTM layers with per-layer
//! LayerNorm, and an output projection. Row u of the output encodes the
//! label history y_1..y_u; row 0 is the start-of-sequence state (the blank
//! id doubles as the start symbol).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::emformer::LAYER_NORM_EPS;
use crate::model::params::{ModelParams, ParamGroup, ParamVars};
use crate::tensor::rng::RngStream;
use crate::tensor::tape::{Mode, Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PredictorConfig {
    /// Label vocabulary size, excluding blank. Blank id = vocab_size.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub lstm_layers: usize,
    pub hidden_dim: usize,
    /// Output projection width consumed by the joiner.
    pub output_dim: usize,
    pub dropout_p: Real,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl PredictorConfig {
    pub fn desk() -> Self {
        PredictorConfig {
            vocab_size: 8,
            embed_dim: 32,
            lstm_layers: 1,
            hidden_dim: 64,
            output_dim: 64,
            dropout_p: 0.3,
        }
    }

    /// The published profile: 3 LSTM layers of 512 units.
    pub fn full_scale() -> Self {
        PredictorConfig {
            vocab_size: 4096,
            embed_dim: 512,
            lstm_layers: 3,
            hidden_dim: 512,
            output_dim: 512,
            dropout_p: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 1 {
            return Err(Error::config("vocab_size must be >= 1"));
        }
        if self.lstm_layers == 0 || self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::config("predictor dimensions must be positive"));
        }
        Ok(())
    }

    /// Blank token id (also used as the start-of-sequence symbol).
    pub fn blank_id(&self) -> usize {
        self.vocab_size
    }

    pub fn num_classes(&self) -> usize {
        self.vocab_size + 1
    }
}

pub fn register_predictor_params(
    params: &mut ModelParams,
    cfg: &PredictorConfig,
    rng: &mut RngStream,
) -> Result<()> {
    cfg.validate()?;
    params.register(
        "predictor.embed",
        ParamGroup::Predictor,
        Tensor::randn(
            vec![cfg.num_classes(), cfg.embed_dim],
            1.0 / (cfg.embed_dim as Real).sqrt(),
            rng,
        ),
    )?;
    for l in 0..cfg.lstm_layers {
        let in_dim = if l == 0 { cfg.embed_dim } else { cfg.hidden_dim };
        let h = cfg.hidden_dim;
        params.register(
            &format!("predictor.lstm{l}.wx"),
            ParamGroup::Predictor,
            Tensor::randn(vec![in_dim, 4 * h], 1.0 / (in_dim as Real).sqrt(), rng),
        )?;
        params.register(
            &format!("predictor.lstm{l}.wh"),
            ParamGroup::Predictor,
            Tensor::randn(vec![h, 4 * h], 1.0 / (h as Real).sqrt(), rng),
        )?;
        // forget-gate bias starts at 1 so early training does not flush state
        let mut bias = Tensor::zeros(vec![4 * h]);
        bias.data_mut()[h..2 * h].iter_mut().for_each(|x| *x = 1.0);
        params.register(&format!("predictor.lstm{l}.b"), ParamGroup::Predictor, bias)?;
        params.register(
            &format!("predictor.lstm{l}.ln.gain"),
            ParamGroup::Predictor,
            Tensor::filled(vec![h], 1.0),
        )?;
        params.register(
            &format!("predictor.lstm{l}.ln.bias"),
            ParamGroup::Predictor,
            Tensor::zeros(vec![h]),
        )?;
    }
    params.register(
        "predictor.out.w",
        ParamGroup::Predictor,
        Tensor::randn(
            vec![cfg.hidden_dim, cfg.output_dim],
            1.0 / (cfg.hidden_dim as Real).sqrt(),
            rng,
        ),
    )?;
    params.register(
        "predictor.out.b",
        ParamGroup::Predictor,
        Tensor::zeros(vec![cfg.output_dim]),
    )?;
    Ok(())
}

/// Per-layer (h, c) handles for incremental stepping.
pub struct PredictorState {
    cells: Vec<(Var, Var)>,
}

fn lstm_cell_step(
    tape: &mut Tape,
    pv: &ParamVars,
    layer: usize,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    hidden: usize,
) -> Result<(Var, Var)> {
    let wx = pv.get(&format!("predictor.lstm{layer}.wx"))?;
    let wh = pv.get(&format!("predictor.lstm{layer}.wh"))?;
    let b = pv.get(&format!("predictor.lstm{layer}.b"))?;
    let gx = tape.matmul(x, wx)?;
    let gh = tape.matmul(h_prev, wh)?;
    let gsum = tape.add(gx, gh)?;
    let gates = tape.add_row(gsum, b)?;
    let i_gate = {
        let s = tape.slice_cols(gates, 0, hidden)?;
        tape.sigmoid(s)
    };
    let f_gate = {
        let s = tape.slice_cols(gates, hidden, 2 * hidden)?;
        tape.sigmoid(s)
    };
    let g_gate = {
        let s = tape.slice_cols(gates, 2 * hidden, 3 * hidden)?;
        tape.tanh(s)
    };
    let o_gate = {
        let s = tape.slice_cols(gates, 3 * hidden, 4 * hidden)?;
        tape.sigmoid(s)
    };
    let keep = tape.mul(f_gate, c_prev)?;
    let write = tape.mul(i_gate, g_gate)?;
    let c = tape.add(keep, write)?;
    let c_act = tape.tanh(c);
    let h = tape.mul(o_gate, c_act)?;
    Ok((h, c))
}

/// Advance the stack one token step: embed, run each LSTM layer, LayerNorm
/// each layer's hidden output before feeding the next. Returns the top
/// normalized hidden row.
fn stack_step(
    tape: &mut Tape,
    pv: &ParamVars,
    cfg: &PredictorConfig,
    state: &mut PredictorState,
    token: usize,
) -> Result<Var> {
    let embed = pv.get("predictor.embed")?;
    let mut x = tape.embed_lookup(embed, &[token])?;
    for l in 0..cfg.lstm_layers {
        let (h_prev, c_prev) = state.cells[l];
        let (h, c) = lstm_cell_step(tape, pv, l, x, h_prev, c_prev, cfg.hidden_dim)?;
        state.cells[l] = (h, c);
        let gain = pv.get(&format!("predictor.lstm{l}.ln.gain"))?;
        let bias = pv.get(&format!("predictor.lstm{l}.ln.bias"))?;
        x = tape.layer_norm(h, gain, bias, LAYER_NORM_EPS)?;
    }
    Ok(x)
}

fn project_rows(tape: &mut Tape, pv: &ParamVars, rows: Var) -> Result<Var> {
    let w = pv.get("predictor.out.w")?;
    let b = pv.get("predictor.out.b")?;
    let y = tape.matmul(rows, w)?;
    tape.add_row(y, b)
}

/// Full-sequence predictor forward: (U+1) output rows for U labels.
pub fn predictor_forward(
    tape: &mut Tape,
    labels: &[usize],
    pv: &ParamVars,
    cfg: &PredictorConfig,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<Var> {
    if let Some(&bad) = labels.iter().find(|&&y| y >= cfg.vocab_size) {
        return Err(Error::Vocab(format!(
            "token id {bad} out of range for vocab of {}",
            cfg.vocab_size
        )));
    }
    let mut state = fresh_state(tape, cfg);
    let mut rows = Vec::with_capacity(labels.len() + 1);
    rows.push(stack_step(tape, pv, cfg, &mut state, cfg.blank_id())?);
    for &y in labels {
        rows.push(stack_step(tape, pv, cfg, &mut state, y)?);
    }
    let seq = tape.concat_rows(&rows)?;
    let seq = tape.dropout(seq, cfg.dropout_p, mode, rng)?;
    project_rows(tape, pv, seq)
}

fn fresh_state(tape: &mut Tape, cfg: &PredictorConfig) -> PredictorState {
    let cells = (0..cfg.lstm_layers)
        .map(|_| {
            let h = tape.zeros_const(vec![1, cfg.hidden_dim]);
            let c = tape.zeros_const(vec![1, cfg.hidden_dim]);
            (h, c)
        })
        .collect();
    PredictorState { cells }
}

/// Start an incremental predictor: returns the state and the row for the
/// empty history. Used by greedy decoding.
pub fn predictor_start(
    tape: &mut Tape,
    pv: &ParamVars,
    cfg: &PredictorConfig,
) -> Result<(PredictorState, Var)> {
    let mut state = fresh_state(tape, cfg);
    let top = stack_step(tape, pv, cfg, &mut state, cfg.blank_id())?;
    let row = project_rows(tape, pv, top)?;
    Ok((state, row))
}

/// Advance the incremental predictor by one emitted token.
pub fn predictor_step(
    tape: &mut Tape,
    pv: &ParamVars,
    cfg: &PredictorConfig,
    state: &mut PredictorState,
    token: usize,
) -> Result<Var> {
    if token >= cfg.vocab_size {
        return Err(Error::Vocab(format!(
            "token id {token} out of range for vocab of {}",
            cfg.vocab_size
        )));
    }
    let top = stack_step(tape, pv, cfg, state, token)?;
    project_rows(tape, pv, top)
}
