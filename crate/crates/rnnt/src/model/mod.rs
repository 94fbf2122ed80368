//! RNN-T model assembly: Emformer encoder, LSTM predictor, additive joiner.

pub mod emformer;
pub mod joiner;
pub mod params;
pub mod predictor;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::loss::{transducer_loss_op, AlignmentBand};
use crate::tensor::rng::RngStream;
use crate::tensor::tape::{Mode, Tape, Var};
use crate::tensor::{Real, Tensor};

pub use emformer::{encoder_forward, EmformerConfig, EmformerLayer, EmformerLayerState};
pub use joiner::{joiner_forward, joiner_single, JoinerConfig};
pub use params::{GradMap, ModelParams, ParamGroup, ParamVars};
pub use predictor::{predictor_forward, predictor_start, predictor_step, PredictorConfig};

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RnntModel {
    pub encoder: EmformerConfig,
    pub predictor: PredictorConfig,
    pub joiner: JoinerConfig,
}

impl RnntModel {
    pub fn desk() -> Self {
        RnntModel {
            encoder: EmformerConfig::desk(),
            predictor: PredictorConfig::desk(),
            joiner: JoinerConfig::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.predictor.validate()?;
        self.joiner.validate()
    }

    pub fn num_classes(&self) -> usize {
        self.predictor.num_classes()
    }

    pub fn blank_id(&self) -> usize {
        self.predictor.blank_id()
    }

    /// Build the full parameter registry with seeded initialization.
    pub fn init_params(&self, rng: &mut RngStream) -> Result<ModelParams> {
        self.validate()?;
        let mut params = ModelParams::new();
        emformer::register_encoder_params(&mut params, &self.encoder, rng)?;
        predictor::register_predictor_params(&mut params, &self.predictor, rng)?;
        joiner::register_joiner_params(
            &mut params,
            &self.joiner,
            self.encoder.output_dim,
            self.predictor.output_dim,
            self.num_classes(),
            rng,
        )?;
        Ok(params)
    }

    /// Normalized log-probabilities [T, U+1, V+1] for one utterance.
    #[allow(clippy::too_many_arguments)]
    pub fn utterance_log_probs(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        features: &Tensor,
        labels: &[usize],
        logit_noise_std: Real,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<Var> {
        let feat = tape.constant(features);
        let enc = encoder_forward(tape, feat, pv, &self.encoder, mode, rng)?;
        let pred = predictor_forward(tape, labels, pv, &self.predictor, mode, rng)?;
        let logits = joiner_forward(
            tape,
            enc,
            pred,
            pv,
            &self.joiner,
            self.num_classes(),
            logit_noise_std,
            mode,
            rng,
        )?;
        tape.log_softmax(logits)
    }

    /// Scalar transducer loss node for one utterance.
    #[allow(clippy::too_many_arguments)]
    pub fn utterance_loss(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        features: &Tensor,
        labels: &[usize],
        band: Option<&AlignmentBand>,
        logit_noise_std: Real,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<Var> {
        let log_probs =
            self.utterance_log_probs(tape, pv, features, labels, logit_noise_std, mode, rng)?;
        transducer_loss_op(tape, log_probs, labels, band)
    }

    /// Eval-mode encoder output as a plain tensor (decode entry point).
    pub fn encode(&self, params: &ModelParams, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let feat = tape.constant(features);
        let mut rng = RngStream::new(0);
        let enc = encoder_forward(&mut tape, feat, &pv, &self.encoder, Mode::Eval, &mut rng)?;
        Ok(tape.to_tensor(enc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model(vocab: usize) -> RnntModel {
        RnntModel {
            encoder: EmformerConfig {
                num_layers: 1,
                d_model: 8,
                num_heads: 2,
                ffn_dim: 16,
                segment_length: 2,
                right_context_segments: 1,
                left_context_segments: 4,
                dropout_p: 0.1,
                input_dim: 4,
                output_dim: 8,
            },
            predictor: PredictorConfig {
                vocab_size: vocab,
                embed_dim: 6,
                lstm_layers: 1,
                hidden_dim: 8,
                output_dim: 8,
                dropout_p: 0.1,
            },
            joiner: JoinerConfig { joint_dim: 8 },
        }
    }

    #[test]
    fn end_to_end_loss_is_finite_and_differentiable() {
        let model = tiny_model(3);
        let mut rng = RngStream::new(70);
        let params = model.init_params(&mut rng).unwrap();
        let feat = Tensor::randn(vec![6, 4], 1.0, &mut rng);
        let labels = [0usize, 2];

        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let mut drng = RngStream::new(1);
        let loss = model
            .utterance_loss(&mut tape, &pv, &feat, &labels, None, 0.0, Mode::Train, &mut drng)
            .unwrap();
        assert!(tape.scalar_value(loss).is_finite());
        assert!(tape.scalar_value(loss) > 0.0);
        tape.backward(loss).unwrap();
        let grads = params.pull_grads(&tape, &pv);
        let total: Real = grads.values().flatten().map(|g| g.abs()).sum();
        assert!(total > 0.0);
    }

    #[test]
    fn eval_loss_consumes_no_rng() {
        let model = tiny_model(3);
        let mut rng = RngStream::new(71);
        let params = model.init_params(&mut rng).unwrap();
        let feat = Tensor::randn(vec![4, 4], 1.0, &mut rng);
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let mut drng = RngStream::new(1);
        model
            .utterance_loss(&mut tape, &pv, &feat, &[1], None, 0.5, Mode::Eval, &mut drng)
            .unwrap();
        assert_eq!(drng.draw_count(), 0);
    }
}
