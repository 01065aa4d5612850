//! Small decoder-only transformer with a hand-written backward pass.

mod checkpoint;
mod config;
mod generate;
mod model;
mod optim;
mod params;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{LmConfig, MaskMode, PositionMode, Precision, TrainConfig};
pub use generate::{generate, score_continuation, score_sequence, Sampling};
pub use model::{backward, cross_entropy, forward, forward_cached, loss_and_grads, loss_with_targets, target_log_probs, ForwardCache};
pub use optim::{clip_grad_norm, AdamW};
pub use params::{LayerParams, Params};
pub use train::{batch_loss_and_grads, train, Batch, StepLog, TrainOutcome};
