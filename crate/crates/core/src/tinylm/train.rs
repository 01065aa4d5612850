use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::config::TrainConfig;
use super::model::loss_and_grads;
use super::optim::{clip_grad_norm, AdamW};
use super::params::Params;
use crate::corpus::{TokenId, TokenSequence};
use crate::error::{ForgeError, Result};
use crate::rng::derive_rng;
use crate::scalar::Scalar;

/// Per-step record handed to the training callback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub tokens: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Final weights, or the last finite weights if training diverged.
    pub params: Params<T>,
    pub losses: Vec<f64>,
    pub diverged_at: Option<usize>,
    pub tokens_seen: usize,
}

impl<T> TrainOutcome<T> {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Rows of equal length with their loss masks, flattened.
#[derive(Debug, Clone)]
pub struct Batch {
    pub tokens: Vec<TokenId>,
    pub mask: Vec<bool>,
    pub rows: usize,
    pub len: usize,
}

impl Batch {
    pub fn from_sequences(seqs: &[&TokenSequence]) -> Result<Self> {
        let len = seqs.first().map(|s| s.len()).unwrap_or(0);
        if seqs.iter().any(|s| s.len() != len) {
            return Err(ForgeError::invalid("batch rows differ in length"));
        }
        let mut tokens = Vec::with_capacity(seqs.len() * len);
        let mut mask = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            tokens.extend_from_slice(&s.ids);
            mask.extend(s.mask_or_all());
        }
        Ok(Batch {
            tokens,
            mask,
            rows: seqs.len(),
            len,
        })
    }

    fn slice(&self, rows: std::ops::Range<usize>) -> (&[TokenId], &[bool]) {
        let r = rows.start * self.len..rows.end * self.len;
        (&self.tokens[r.clone()], &self.mask[r])
    }

    fn targets_in(&self, rows: std::ops::Range<usize>) -> usize {
        rows.map(|b| self.mask[b * self.len + 1..(b + 1) * self.len].iter().filter(|&&m| m).count())
            .sum()
    }
}

/// Loss and gradient of a batch. Rows are split across the current rayon
/// pool; per-chunk results are combined in chunk order, weighted by the
/// number of target tokens.
pub fn batch_loss_and_grads<T: Scalar>(params: &Params<T>, batch: &Batch) -> Result<(T, Params<T>)> {
    let threads = rayon::current_num_threads().min(batch.rows).max(1);
    if threads == 1 {
        return loss_and_grads(params, &batch.tokens, &batch.mask, batch.rows, batch.len);
    }
    let per = batch.rows.div_ceil(threads);
    let chunks: Vec<std::ops::Range<usize>> = (0..batch.rows)
        .step_by(per)
        .map(|s| s..(s + per).min(batch.rows))
        .filter(|r| batch.targets_in(r.clone()) > 0)
        .collect();
    let total = batch.targets_in(0..batch.rows);
    if total == 0 {
        return Err(ForgeError::invalid("loss mask selects no tokens"));
    }
    let parts: Vec<Result<(usize, T, Params<T>)>> = chunks
        .par_iter()
        .map(|r| {
            let (t, m) = batch.slice(r.clone());
            let (l, g) = loss_and_grads(params, t, m, r.len(), batch.len)?;
            Ok((batch.targets_in(r.clone()), l, g))
        })
        .collect();
    let mut loss = T::zero();
    let mut grads = params.zeros_like();
    for part in parts {
        let (count, l, g) = part?;
        let w = T::from_usize(count).unwrap() / T::from_usize(total).unwrap();
        loss += w * l;
        for ((_, acc), (_, gv)) in grads.groups_mut().into_iter().zip(g.groups()) {
            for (a, &b) in acc.iter_mut().zip(gv.iter()) {
                *a += w * b;
            }
        }
    }
    Ok((loss, grads))
}

/// Trains on a pool of equal-length sequences for `cfg.steps` steps. Each
/// epoch visits the pool in a fresh seeded order. Stops early on a
/// non-finite loss or gradient and returns the last finite weights.
pub fn train<T: Scalar>(
    params: Params<T>,
    data: &[TokenSequence],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(ForgeError::invalid("training pool is empty"));
    }
    let mut params = params;
    let mut opt = AdamW::new(&params, cfg);
    let mut rng = derive_rng(cfg.seed, &[0x7a]);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut tokens_seen = 0usize;
    for step in 0..cfg.steps {
        let mut rows = Vec::with_capacity(cfg.batch_size);
        while rows.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..data.len()).collect();
                if cfg.shuffle {
                    order.shuffle(&mut rng);
                }
                cursor = 0;
            }
            rows.push(&data[order[cursor]]);
            cursor += 1;
        }
        let batch = Batch::from_sequences(&rows)?;
        let (loss, mut grads) = match batch_loss_and_grads(&params, &batch) {
            Ok(r) => r,
            Err(ForgeError::NonFinite { .. }) => {
                return Ok(diverged(params, losses, step, tokens_seen));
            }
            Err(e) => return Err(e),
        };
        let loss = loss.as_f64();
        let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip);
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Ok(diverged(params, losses, step, tokens_seen));
        }
        let lr = cfg.lr_at(step);
        let before = params.clone();
        opt.update(&mut params, &grads, lr);
        if !params.is_finite() {
            return Ok(diverged(before, losses, step, tokens_seen));
        }
        tokens_seen += batch.tokens.len();
        losses.push(loss);
        on_step(&StepLog {
            step,
            loss,
            lr,
            grad_norm,
            tokens: tokens_seen,
        });
    }
    Ok(TrainOutcome {
        params,
        losses,
        diverged_at: None,
        tokens_seen,
    })
}

fn diverged<T>(params: Params<T>, losses: Vec<f64>, step: usize, tokens_seen: usize) -> TrainOutcome<T> {
    log::warn!("training diverged at step {step}");
    TrainOutcome {
        params,
        losses,
        diverged_at: Some(step),
        tokens_seen,
    }
}

#[cfg(test)]
mod tests {
    use super::super::config::LmConfig;
    use super::*;

    fn cfg() -> LmConfig {
        LmConfig {
            vocab_size: 12,
            n_layers: 1,
            dim: 16,
            n_heads: 2,
            head_dim: 8,
            ffn_dim: 32,
            max_seq_len: 16,
            ..Default::default()
        }
    }

    fn pool() -> Vec<TokenSequence> {
        (0..8)
            .map(|i| TokenSequence::new((0..9).map(|t| ((t + i) % 12) as u32).collect()))
            .collect()
    }

    #[test]
    fn loss_decreases_on_repeated_batch() {
        let p = Params::<f32>::init(&cfg()).unwrap();
        let tc = TrainConfig {
            batch_size: 8,
            steps: 60,
            peak_lr: 3e-3,
            final_lr: 3e-3,
            weight_decay: 0.0,
            ..Default::default()
        };
        let out = train(p, &pool(), &tc, |_| {}).unwrap();
        assert_eq!(out.diverged_at, None);
        let l = &out.losses;
        let warm = 5;
        let non_increasing = l[warm..].windows(2).filter(|w| w[1] <= w[0] + 1e-6).count();
        assert!(non_increasing as f64 >= 0.95 * (l.len() - warm - 1) as f64, "{l:?}");
        assert!(l.last().unwrap() < &(0.5 * l[0]));
    }

    #[test]
    fn training_is_deterministic() {
        let tc = TrainConfig {
            batch_size: 3,
            steps: 10,
            ..Default::default()
        };
        let a = train(Params::<f64>::init(&cfg()).unwrap(), &pool(), &tc, |_| {}).unwrap();
        let b = train(Params::<f64>::init(&cfg()).unwrap(), &pool(), &tc, |_| {}).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn huge_lr_reports_divergence_with_finite_params() {
        let tc = TrainConfig {
            batch_size: 4,
            steps: 200,
            peak_lr: 1e30,
            final_lr: 1e30,
            grad_clip: 0.0,
            weight_decay: 0.0,
            ..Default::default()
        };
        let out = train(Params::<f32>::init(&cfg()).unwrap(), &pool(), &tc, |_| {}).unwrap();
        assert!(out.diverged_at.is_some());
        assert!(out.params.is_finite());
    }

    #[test]
    fn threaded_gradients_match_serial() {
        let p = Params::<f64>::init(&cfg()).unwrap();
        let seqs = pool();
        let refs: Vec<&TokenSequence> = seqs.iter().collect();
        let batch = Batch::from_sequences(&refs).unwrap();
        let (l1, g1) = loss_and_grads(&p, &batch.tokens, &batch.mask, batch.rows, batch.len).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let (l2, g2) = pool.install(|| batch_loss_and_grads(&p, &batch)).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for ((_, a), (_, b)) in g1.groups().iter().zip(g2.groups()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
