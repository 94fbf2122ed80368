//! Desk-scale training framework for streaming Emformer RNN-transducer
//! models, built around two training-time techniques: parameter-space
//! Gaussian noise with adaptive per-column scaling, and pruning-aware
//! training with 8x1 block masks grown along a cubic sparsity schedule.
//!
//! The crate is self-contained: a small reverse-mode autodiff tensor core,
//! an audio feature front-end, the model (Emformer encoder, LSTM predictor,
//! additive joiner), the transducer loss with enumeration oracles, and a
//! training harness with synthetic tasks, checkpointing and diagnostics.

pub mod data;
pub mod error;
pub mod features;
pub mod loss;
pub mod model;
pub mod noise;
pub mod optim;
pub mod prune;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
