//! Vector quantization on synthetic features: pooling, nearest-code
//! lookup, EMA codebook learning with restarts, and block-causal masks.

mod blob;
mod demo;
mod matrix;
mod ops;
mod vq;

pub use blob::{decode_vq_state, encode_vq_state, load_vq_state, save_vq_state, VQ_MAGIC, VQ_VERSION};
pub use demo::{gaussian_mixture, run_vq_demo, VqDemoPoint, VqDemoReport};
pub use matrix::{squared_distance, Matrix};
pub use ops::{block_causal_mask, pool};
pub use vq::{perplexity, ClusterStats, VqConfig, VqState, VqStepReport};
