use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matrix::{squared_distance, Matrix};
use crate::error::{ForgeError, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqConfig {
    pub codebook_size: usize,
    pub dim: usize,
    pub pool_window: usize,
    pub ema_decay: f64,
    pub commitment_coeff: f64,
    pub restart_threshold: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for VqConfig {
    fn default() -> Self {
        VqConfig {
            codebook_size: 16,
            dim: 8,
            pool_window: 1,
            ema_decay: 0.99,
            commitment_coeff: 10.0,
            restart_threshold: 0.01,
            eps: 1e-5,
            seed: 0,
        }
    }
}

impl VqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.codebook_size < 2 {
            return Err(ForgeError::config("vq.codebook_size", "must be >= 2"));
        }
        if self.dim == 0 {
            return Err(ForgeError::config("vq.dim", "must be >= 1"));
        }
        if self.pool_window == 0 {
            return Err(ForgeError::config("vq.pool_window", "must be >= 1"));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(ForgeError::config("vq.ema_decay", format!("{} not in (0, 1)", self.ema_decay)));
        }
        if !(self.commitment_coeff >= 0.0 && self.commitment_coeff.is_finite()) {
            return Err(ForgeError::config("vq.commitment_coeff", "must be >= 0"));
        }
        if !(self.restart_threshold >= 0.0) {
            return Err(ForgeError::config("vq.restart_threshold", "must be >= 0"));
        }
        if !(self.eps > 0.0) {
            return Err(ForgeError::config("vq.eps", "must be > 0"));
        }
        Ok(())
    }
}

/// Per-code assignment counts and vector sums of one batch (or several
/// merged batches).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats<T> {
    pub counts: Vec<u64>,
    pub sums: Matrix<T>,
    pub rows: u64,
}

impl<T: Scalar> ClusterStats<T> {
    pub fn empty(codes: usize, dim: usize) -> Self {
        ClusterStats {
            counts: vec![0; codes],
            sums: Matrix::zeros(codes, dim),
            rows: 0,
        }
    }

    pub fn from_assignments(batch: &Matrix<T>, indices: &[usize], codes: usize) -> Result<Self> {
        if indices.len() != batch.rows() {
            return Err(ForgeError::invalid("one index per batch row required"));
        }
        let mut s = Self::empty(codes, batch.cols());
        for (row, &c) in batch.iter_rows().zip(indices) {
            if c >= codes {
                return Err(ForgeError::invalid(format!("code {c} out of range")));
            }
            s.counts[c] += 1;
            for (acc, &x) in s.sums.row_mut(c).iter_mut().zip(row) {
                *acc += x;
            }
        }
        s.rows = batch.rows() as u64;
        Ok(s)
    }

    /// Associative combination of two shards.
    pub fn merge(mut self, other: &Self) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, &b) in self.sums.as_mut_slice().iter_mut().zip(other.sums.as_slice()) {
            *a += b;
        }
        self.rows += other.rows;
        self
    }
}

/// Codebook with its EMA statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct VqState<T> {
    pub config: VqConfig,
    pub codebook: Matrix<T>,
    pub cluster_size: Vec<T>,
    pub embed_sum: Matrix<T>,
    pub usage: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> VqState<T> {
    /// Codebook rows drawn from the first batch by D² seeding: the first
    /// uniformly, each next one with probability proportional to its squared
    /// distance from the codes picked so far. Falls back to uniform picks
    /// once every row coincides with a code. EMA statistics start at one
    /// sample per code.
    pub fn from_batch(config: &VqConfig, batch: &Matrix<T>, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        check_batch(config, batch)?;
        let k = config.codebook_size;
        let n = batch.rows();
        let mut picks = vec![rng.random_range(0..n)];
        let mut d2: Vec<f64> = batch
            .iter_rows()
            .map(|x| squared_distance(x, batch.row(picks[0])).as_f64())
            .collect();
        while picks.len() < k {
            let total: f64 = d2.iter().sum();
            let next = if total > 0.0 && total.is_finite() {
                let mut u = rng.random::<f64>() * total;
                let mut chosen = n - 1;
                for (i, &d) in d2.iter().enumerate() {
                    if u < d {
                        chosen = i;
                        break;
                    }
                    u -= d;
                }
                chosen
            } else {
                rng.random_range(0..n)
            };
            picks.push(next);
            for (d, x) in d2.iter_mut().zip(batch.iter_rows()) {
                *d = d.min(squared_distance(x, batch.row(next)).as_f64());
            }
        }
        let mut codebook = Matrix::zeros(k, config.dim);
        for (c, &r) in picks.iter().enumerate() {
            codebook.row_mut(c).copy_from_slice(batch.row(r));
        }
        Self::from_codebook(config, codebook)
    }

    pub fn from_codebook(config: &VqConfig, codebook: Matrix<T>) -> Result<Self> {
        config.validate()?;
        if codebook.rows() != config.codebook_size || codebook.cols() != config.dim {
            return Err(ForgeError::invalid("codebook shape disagrees with config"));
        }
        if !codebook.is_finite() {
            return Err(ForgeError::invalid("codebook has non-finite entries"));
        }
        let k = config.codebook_size;
        Ok(VqState {
            config: config.clone(),
            embed_sum: codebook.clone(),
            codebook,
            cluster_size: vec![T::one(); k],
            usage: vec![T::one() / T::from_usize(k).unwrap(); k],
            step: 0,
        })
    }

    /// Nearest code for every row (ties to the lowest index) and the
    /// commitment value `β · mean ‖x − e‖²`. Rows are scanned on the current
    /// rayon pool; results do not depend on the split.
    pub fn quantize(&self, batch: &Matrix<T>) -> Result<(Vec<usize>, T)> {
        check_batch(&self.config, batch)?;
        if !batch.is_finite() {
            return Err(ForgeError::invalid("non-finite value in quantizer input"));
        }
        let rows: Vec<&[T]> = batch.iter_rows().collect();
        let best: Vec<(usize, T)> = rows.par_iter().map(|x| self.nearest(x)).collect();
        let total: T = best.iter().map(|b| b.1).sum();
        let mean = total / T::from_usize(batch.rows()).unwrap();
        Ok((best.into_iter().map(|b| b.0).collect(), T::lit(self.config.commitment_coeff) * mean))
    }

    fn nearest(&self, x: &[T]) -> (usize, T) {
        let mut best = (0, squared_distance(x, self.codebook.row(0)));
        for c in 1..self.codebook.rows() {
            let d = squared_distance(x, self.codebook.row(c));
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    }

    /// EMA step from batch statistics:
    /// `N ← γN + (1−γ)n`, `S ← γS + (1−γ)s`, `e ← S / max(N, ε)`, and usage
    /// as an EMA of assignment frequency.
    pub fn apply_stats(&mut self, stats: &ClusterStats<T>) {
        let g = T::lit(self.config.ema_decay);
        let one_m = T::one() - g;
        let eps = T::lit(self.config.eps);
        let m = T::from_u64(stats.rows.max(1)).unwrap();
        for c in 0..self.config.codebook_size {
            let n = T::from_u64(stats.counts[c]).unwrap();
            self.cluster_size[c] = g * self.cluster_size[c] + one_m * n;
            self.usage[c] = g * self.usage[c] + one_m * n / m;
            let denom = self.cluster_size[c].max(eps);
            let (sum_row, stat_row) = (self.embed_sum.row_mut(c), stats.sums.row(c));
            for (s, &x) in sum_row.iter_mut().zip(stat_row) {
                *s = g * *s + one_m * x;
            }
            for (e, &s) in self.codebook.row_mut(c).iter_mut().zip(self.embed_sum.row(c)) {
                *e = s / denom;
            }
        }
        self.step += 1;
    }

    pub fn ema_update(&mut self, batch: &Matrix<T>, indices: &[usize]) -> Result<()> {
        let stats = ClusterStats::from_assignments(batch, indices, self.config.codebook_size)?;
        self.apply_stats(&stats);
        Ok(())
    }

    /// Resets every code whose usage is below the threshold to a uniformly
    /// drawn batch row. Returns the restarted code ids in increasing order.
    pub fn random_restart(&mut self, batch: &Matrix<T>, rng: &mut Rng) -> Result<Vec<usize>> {
        check_batch(&self.config, batch)?;
        let threshold = T::lit(self.config.restart_threshold);
        let fresh = T::one() / T::from_usize(self.config.codebook_size).unwrap();
        let mut restarted = Vec::new();
        for c in 0..self.config.codebook_size {
            if self.usage[c] < threshold {
                let r = rng.random_range(0..batch.rows());
                self.codebook.row_mut(c).copy_from_slice(batch.row(r));
                self.embed_sum.row_mut(c).copy_from_slice(batch.row(r));
                self.cluster_size[c] = T::one();
                self.usage[c] = fresh;
                restarted.push(c);
            }
        }
        Ok(restarted)
    }

    /// Quantize, EMA update, restart.
    pub fn train_step(&mut self, batch: &Matrix<T>, rng: &mut Rng) -> Result<VqStepReport> {
        let (indices, commitment) = self.quantize(batch)?;
        let stats = ClusterStats::from_assignments(batch, &indices, self.config.codebook_size)?;
        let perplexity = perplexity(&stats.counts);
        self.apply_stats(&stats);
        let restarted = self.random_restart(batch, rng)?;
        Ok(VqStepReport {
            step: self.step,
            commitment: commitment.as_f64(),
            perplexity,
            restarted,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VqStepReport {
    pub step: u64,
    pub commitment: f64,
    pub perplexity: f64,
    pub restarted: Vec<usize>,
}

/// exp(entropy) of the assignment histogram.
pub fn perplexity(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    h.exp()
}

fn check_batch<T: Scalar>(config: &VqConfig, batch: &Matrix<T>) -> Result<()> {
    if batch.rows() == 0 {
        return Err(ForgeError::invalid("empty batch"));
    }
    if batch.cols() != config.dim {
        return Err(ForgeError::invalid(format!(
            "batch has dim {}, codebook has dim {}",
            batch.cols(),
            config.dim
        )));
    }
    Ok(())
}
