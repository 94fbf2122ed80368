//! Greedy transducer decoding: at each frame, emit argmax tokens until the
//! blank (or a per-frame cap) before advancing time.

use crate::error::{Error, Result};
use crate::model::params::ModelParams;
use crate::model::{joiner_single, predictor_start, predictor_step, RnntModel};
use crate::tensor::tape::Tape;
use crate::tensor::{Real, Tensor};

fn argmax(row: &[Real]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy decode from precomputed encoder output rows [T, d_enc].
pub fn greedy_decode(
    enc: &Tensor,
    model: &RnntModel,
    params: &ModelParams,
    max_symbols_per_frame: usize,
) -> Result<Vec<usize>> {
    if max_symbols_per_frame == 0 {
        return Err(Error::config("max_symbols_per_frame must be >= 1"));
    }
    let blank = model.blank_id();
    let num_classes = model.num_classes();

    let mut tape = Tape::new();
    let pv = params.bind(&mut tape);
    let enc_var = tape.constant(enc);
    let (mut state, mut pred_row) = predictor_start(&mut tape, &pv, &model.predictor)?;

    let mut out = Vec::new();
    for t in 0..enc.rows() {
        let enc_row = tape.slice_rows(enc_var, t, t + 1)?;
        let mut emitted = 0;
        loop {
            let logits = joiner_single(
                &mut tape,
                enc_row,
                pred_row,
                &pv,
                &model.joiner,
                num_classes,
            )?;
            let k = argmax(tape.value(logits));
            if k == blank {
                break;
            }
            out.push(k);
            pred_row = predictor_step(&mut tape, &pv, &model.predictor, &mut state, k)?;
            emitted += 1;
            if emitted >= max_symbols_per_frame {
                break;
            }
        }
    }
    Ok(out)
}

/// Encode then greedily decode one utterance.
pub fn decode_utterance(
    model: &RnntModel,
    params: &ModelParams,
    features: &Tensor,
    max_symbols_per_frame: usize,
) -> Result<Vec<usize>> {
    let enc = model.encode(params, features)?;
    greedy_decode(&enc, model, params, max_symbols_per_frame)
}
