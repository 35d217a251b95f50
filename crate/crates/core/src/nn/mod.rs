//! Neural caption generation: LSTM cells, the term encoder, the caption
//! model with exact gradients, training and checkpoints.

pub mod checkpoint;
pub mod encoder;
pub mod lstm;
pub mod matrix;
pub mod model;
pub mod train;

pub use encoder::{term_tokens, TermEncoderParams, TermToken};
pub use lstm::{lstm_step, LstmParams, LstmState};
pub use matrix::Matrix;
pub use model::{
    CaptionModel, CaptionParams, EmbeddingInputs, Example, ImageInputs, Mode, ModelConfig, ModelDims, ModelKind,
    TermSlot,
};
pub use train::{fit, pretrain_term_encoder, train, LossPoint, PretrainedTermEncoder, TrainConfig, TrainLog};
