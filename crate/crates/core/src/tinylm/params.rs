use rand_distr::{Distribution, Normal};

use super::config::{LmConfig, PositionMode};
use crate::error::Result;
use crate::rng::derive_rng;
use crate::scalar::Scalar;

/// Weights of one pre-norm transformer block. Matrices are row-major
/// `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub attn_norm: Vec<T>,
    pub wq: Vec<T>,
    pub wk: Vec<T>,
    pub wv: Vec<T>,
    pub wo: Vec<T>,
    pub ffn_norm: Vec<T>,
    pub w_gate: Vec<T>,
    pub w_up: Vec<T>,
    pub w_down: Vec<T>,
}

/// All model weights. The same struct doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub config: LmConfig,
    pub tok_emb: Vec<T>,
    /// Empty under rotary positions.
    pub pos_emb: Vec<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_norm: Vec<T>,
    /// `dim × vocab`; empty when embeddings are tied.
    pub lm_head: Vec<T>,
}

fn normal<T: Scalar>(n: usize, std: f64, rng: &mut crate::rng::Rng) -> Vec<T> {
    let dist = Normal::new(0.0, std).expect("valid std");
    (0..n).map(|_| T::lit(dist.sample(rng))).collect()
}

impl<T: Scalar> Params<T> {
    /// Gaussian init; residual output projections are scaled by `1/sqrt(2L)`.
    pub fn init(config: &LmConfig) -> Result<Self> {
        config.validate()?;
        let (d, f, v) = (config.dim, config.ffn_dim, config.vocab_size);
        let std = config.init_std;
        let out_std = std / ((2 * config.n_layers) as f64).sqrt();
        let mut rng = derive_rng(config.seed, &[0x11]);
        let tok_emb = normal(v * d, std, &mut rng);
        let pos_emb = match config.positions {
            PositionMode::Learned => normal(config.max_seq_len * d, std, &mut rng),
            PositionMode::Rotary => Vec::new(),
        };
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                attn_norm: vec![T::one(); d],
                wq: normal(d * d, std, &mut rng),
                wk: normal(d * d, std, &mut rng),
                wv: normal(d * d, std, &mut rng),
                wo: normal(d * d, out_std, &mut rng),
                ffn_norm: vec![T::one(); d],
                w_gate: normal(d * f, std, &mut rng),
                w_up: normal(d * f, std, &mut rng),
                w_down: normal(f * d, out_std, &mut rng),
            })
            .collect();
        let lm_head = if config.tied_embeddings {
            Vec::new()
        } else {
            normal(d * v, std, &mut rng)
        };
        Ok(Params {
            config: config.clone(),
            tok_emb,
            pos_emb,
            layers,
            final_norm: vec![T::one(); d],
            lm_head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_| T::zero())
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Params<U> {
        let m = |v: &Vec<T>| v.iter().map(|&x| f(x)).collect::<Vec<U>>();
        Params {
            config: self.config.clone(),
            tok_emb: m(&self.tok_emb),
            pos_emb: m(&self.pos_emb),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    attn_norm: m(&l.attn_norm),
                    wq: m(&l.wq),
                    wk: m(&l.wk),
                    wv: m(&l.wv),
                    wo: m(&l.wo),
                    ffn_norm: m(&l.ffn_norm),
                    w_gate: m(&l.w_gate),
                    w_up: m(&l.w_up),
                    w_down: m(&l.w_down),
                })
                .collect(),
            final_norm: m(&self.final_norm),
            lm_head: m(&self.lm_head),
        }
    }

    /// Precision conversion (e.g. an f32 training run to f64 for checking).
    pub fn cast<U: Scalar>(&self) -> Params<U> {
        self.map(|x| U::lit(x.as_f64()))
    }

    /// Named parameter groups in a fixed order. Empty groups are skipped.
    pub fn groups(&self) -> Vec<(String, &Vec<T>)> {
        let mut out: Vec<(String, &Vec<T>)> = vec![("tok_emb".into(), &self.tok_emb)];
        if !self.pos_emb.is_empty() {
            out.push(("pos_emb".into(), &self.pos_emb));
        }
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.attn_norm"), &l.attn_norm));
            out.push((format!("layers.{i}.wq"), &l.wq));
            out.push((format!("layers.{i}.wk"), &l.wk));
            out.push((format!("layers.{i}.wv"), &l.wv));
            out.push((format!("layers.{i}.wo"), &l.wo));
            out.push((format!("layers.{i}.ffn_norm"), &l.ffn_norm));
            out.push((format!("layers.{i}.w_gate"), &l.w_gate));
            out.push((format!("layers.{i}.w_up"), &l.w_up));
            out.push((format!("layers.{i}.w_down"), &l.w_down));
        }
        out.push(("final_norm".into(), &self.final_norm));
        if !self.lm_head.is_empty() {
            out.push(("lm_head".into(), &self.lm_head));
        }
        out
    }

    /// Mutable view in the same order as [`Params::groups`].
    pub fn groups_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out: Vec<(String, &mut Vec<T>)> = vec![("tok_emb".into(), &mut self.tok_emb)];
        if !self.pos_emb.is_empty() {
            out.push(("pos_emb".into(), &mut self.pos_emb));
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layers.{i}.attn_norm"), &mut l.attn_norm));
            out.push((format!("layers.{i}.wq"), &mut l.wq));
            out.push((format!("layers.{i}.wk"), &mut l.wk));
            out.push((format!("layers.{i}.wv"), &mut l.wv));
            out.push((format!("layers.{i}.wo"), &mut l.wo));
            out.push((format!("layers.{i}.ffn_norm"), &mut l.ffn_norm));
            out.push((format!("layers.{i}.w_gate"), &mut l.w_gate));
            out.push((format!("layers.{i}.w_up"), &mut l.w_up));
            out.push((format!("layers.{i}.w_down"), &mut l.w_down));
        }
        out.push(("final_norm".into(), &mut self.final_norm));
        if !self.lm_head.is_empty() {
            out.push(("lm_head".into(), &mut self.lm_head));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|(_, g)| g.iter().all(|x| x.is_finite()))
    }

    /// Re-initialize the embedding rows of a token range to zero, used when a
    /// text-only checkpoint is extended with speech tokens.
    pub fn zero_token_rows(&mut self, ids: std::ops::Range<usize>) {
        let d = self.config.dim;
        for id in ids {
            self.tok_emb[id * d..(id + 1) * d].fill(T::zero());
        }
    }

    /// Grow the vocabulary to `new_vocab`, keeping existing rows and zeroing
    /// the new token embeddings (and output columns).
    pub fn extend_vocab(&self, new_vocab: usize) -> Self {
        let old = self.config.vocab_size;
        assert!(new_vocab >= old, "vocab can only grow");
        let d = self.config.dim;
        let mut out = self.clone();
        out.config.vocab_size = new_vocab;
        out.tok_emb.resize(new_vocab * d, T::zero());
        if !self.lm_head.is_empty() {
            let mut head = vec![T::zero(); d * new_vocab];
            for r in 0..d {
                head[r * new_vocab..r * new_vocab + old].copy_from_slice(&self.lm_head[r * old..(r + 1) * old]);
            }
            out.lm_head = head;
        }
        out
    }
}
