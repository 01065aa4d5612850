//! Synthetic interleaved speech-text data pipeline with a desk-scale
//! training and evaluation harness.
//!
//! Numeric code (the vector quantizer and the tiny language model) is generic
//! over [`Scalar`]; the aliases below pin the common instantiations.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod interleave;
pub mod mixer;
pub mod quantizer;
pub mod rng;
pub mod scalar;
pub mod text2token;
pub mod tinylm;

pub use corpus::{TextDoc, TokenId, TokenSequence, Vocab, VocabKind, VocabLayout};
pub use error::{ForgeError, Result};
pub use scalar::Scalar;

/// Single-precision model weights.
pub type TinyLm32 = tinylm::Params<f32>;
/// Double-precision model weights.
pub type TinyLm64 = tinylm::Params<f64>;
/// Single-precision quantizer state.
pub type VqState32 = quantizer::VqState<f32>;
/// Double-precision quantizer state.
pub type VqState64 = quantizer::VqState<f64>;
