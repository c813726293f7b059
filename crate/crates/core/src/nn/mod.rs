//! Tensor engine and the encoder/decoder network.

pub mod gradcheck;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod params;
pub mod tape;

pub use matrix::Matrix;
pub use model::{decode_step, encode, pointer_scores, DecoderState, EncoderOutput, IncrementalDecoder};
pub use params::{ModelConfig, Parameters, Weights};
pub use tape::{Gradients, Tape, Var};
