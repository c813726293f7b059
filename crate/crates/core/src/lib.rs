//! Nested named entity recognition as entity-triplet sequence generation.
//!
//! A small encoder/decoder emits `(start, end, type)` windows by pointing
//! at input positions and type markers. A Gaussian prior centred on an
//! earlier nested entity's boundary reshapes boundary distributions, and a
//! REINFORCE phase fine-tunes the generator without a fixed entity order.

pub mod checkpoint;
pub mod corpus;
pub mod eorl;
pub mod etg;
pub mod gpa;
pub mod harness;
mod error;
pub mod nn;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Parameters64 = nn::Parameters<f64>;
pub type Parameters32 = nn::Parameters<f32>;
