use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MaskMode {
    Causal,
    BlockCausal { block: usize },
}

impl MaskMode {
    #[inline]
    pub fn allows(&self, query: usize, key: usize) -> bool {
        match *self {
            MaskMode::Causal => key <= query,
            MaskMode::BlockCausal { block } => key / block <= query / block,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionMode {
    Learned,
    Rotary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

/// Shape of the decoder-only model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub n_layers: usize,
    pub dim: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub mask: MaskMode,
    pub positions: PositionMode,
    pub tied_embeddings: bool,
    pub precision: Precision,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            vocab_size: 256,
            n_layers: 2,
            dim: 64,
            n_heads: 4,
            head_dim: 16,
            ffn_dim: 128,
            max_seq_len: 128,
            mask: MaskMode::Causal,
            positions: PositionMode::Learned,
            tied_embeddings: false,
            precision: Precision::F32,
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |f: &str, v: usize| {
            if v == 0 {
                Err(ForgeError::config(format!("lm.{f}"), "must be >= 1"))
            } else {
                Ok(())
            }
        };
        pos("vocab_size", self.vocab_size)?;
        pos("n_layers", self.n_layers)?;
        pos("n_heads", self.n_heads)?;
        pos("head_dim", self.head_dim)?;
        pos("ffn_dim", self.ffn_dim)?;
        pos("max_seq_len", self.max_seq_len)?;
        if self.dim != self.n_heads * self.head_dim {
            return Err(ForgeError::config(
                "lm.dim",
                format!("must equal n_heads * head_dim = {}", self.n_heads * self.head_dim),
            ));
        }
        if let MaskMode::BlockCausal { block } = self.mask {
            if block == 0 {
                return Err(ForgeError::config("lm.mask.block", "must be >= 1"));
            }
        }
        if self.positions == PositionMode::Rotary && self.head_dim % 2 != 0 {
            return Err(ForgeError::config("lm.head_dim", "rotary positions need an even head_dim"));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(ForgeError::config("lm.init_std", "must be positive"));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let d = self.dim;
        let per_layer = 2 * d + 4 * d * d + 3 * d * self.ffn_dim;
        let pos = match self.positions {
            PositionMode::Learned => self.max_seq_len * d,
            PositionMode::Rotary => 0,
        };
        let head = if self.tied_embeddings { 0 } else { d * self.vocab_size };
        self.vocab_size * d + pos + self.n_layers * per_layer + d + head
    }
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub peak_lr: f64,
    pub final_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Visit the pool in a fresh seeded order each epoch; when false, rows
    /// are consumed in the given order (e.g. a mixture schedule).
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            steps: 1000,
            peak_lr: 3e-3,
            final_lr: 3e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
            grad_clip: 1.0,
            shuffle: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(ForgeError::config("train.batch_size", "must be >= 1"));
        }
        if !(self.peak_lr >= 0.0 && self.final_lr >= 0.0) {
            return Err(ForgeError::config("train.peak_lr", "learning rates must be non-negative"));
        }
        for (f, v) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(ForgeError::config(f, "must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(ForgeError::config("train.eps", "must be positive"));
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return Err(ForgeError::config("train.weight_decay", "must be non-negative"));
        }
        Ok(())
    }

    /// Linear decay from `peak_lr` at step 0 to `final_lr` at the last step.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return self.peak_lr;
        }
        let frac = (step.min(self.steps - 1)) as f64 / (self.steps - 1) as f64;
        self.peak_lr + (self.final_lr - self.peak_lr) * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_linearity() {
        let cfg = TrainConfig {
            steps: 11,
            peak_lr: 6e-5,
            final_lr: 6e-6,
            ..Default::default()
        };
        assert_eq!(cfg.lr_at(0), 6e-5);
        assert!((cfg.lr_at(10) - 6e-6).abs() < 1e-20);
        for s in 0..10 {
            let step = cfg.lr_at(s + 1) - cfg.lr_at(s);
            assert!((step - (6e-6 - 6e-5) / 10.0).abs() < 1e-18);
        }
    }

    #[test]
    fn dim_must_match_heads() {
        let cfg = LmConfig {
            dim: 30,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(LmConfig::default().validate().is_ok());
    }

    #[test]
    fn mask_modes() {
        assert!(MaskMode::Causal.allows(3, 3));
        assert!(!MaskMode::Causal.allows(3, 4));
        let b = MaskMode::BlockCausal { block: 2 };
        assert!(b.allows(2, 3));
        assert!(!b.allows(3, 4));
    }
}
