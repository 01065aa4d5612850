use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::matrix::{squared_distance, Matrix};
use super::vq::{VqConfig, VqState};
use crate::error::Result;
use crate::rng::{derive_rng, Rng};
use crate::scalar::Scalar;

/// Samples `n_per` points around each center with isotropic noise. Points
/// are interleaved by component so that any prefix is balanced.
pub fn gaussian_mixture<T: Scalar>(centers: &Matrix<T>, n_per: usize, std: f64, rng: &mut Rng) -> Matrix<T> {
    let noise = Normal::new(0.0, std).expect("valid std");
    let (k, d) = (centers.rows(), centers.cols());
    let mut out = Matrix::zeros(k * n_per, d);
    for i in 0..n_per {
        for c in 0..k {
            let row = out.row_mut(i * k + c);
            for (x, &m) in row.iter_mut().zip(centers.row(c)) {
                *x = m + T::lit(noise.sample(rng));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct VqDemoPoint {
    pub step: u64,
    pub commitment: f64,
    pub perplexity: f64,
    pub restarts: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct VqDemoReport {
    pub codes: usize,
    pub dim: usize,
    pub steps: usize,
    pub trace: Vec<VqDemoPoint>,
    pub total_restarts: usize,
    /// Mean distance from each true center to its nearest code.
    pub center_error: f64,
}

/// Fits a codebook to a synthetic mixture with as many components as codes.
pub fn run_vq_demo<T: Scalar>(cfg: &VqConfig, steps: usize, batch_size: usize) -> Result<(VqState<T>, VqDemoReport)> {
    cfg.validate()?;
    let mut rng = derive_rng(cfg.seed, &[0x71]);
    let centers_dist = Normal::new(0.0, 4.0).expect("valid std");
    let centers_rows: Vec<Vec<T>> = (0..cfg.codebook_size)
        .map(|_| (0..cfg.dim).map(|_| T::lit(centers_dist.sample(&mut rng))).collect())
        .collect();
    let centers = Matrix::from_rows(&centers_rows)?;
    let per = batch_size.div_ceil(cfg.codebook_size).max(1);
    let first = gaussian_mixture(&centers, per, 0.3, &mut rng);
    let mut state = VqState::from_batch(cfg, &first, &mut rng)?;
    let mut trace = Vec::new();
    let mut total_restarts = 0;
    let every = (steps / 20).max(1);
    for s in 0..steps {
        let batch = gaussian_mixture(&centers, per, 0.3, &mut rng);
        let r = state.train_step(&batch, &mut rng)?;
        total_restarts += r.restarted.len();
        if s % every == 0 || s + 1 == steps {
            trace.push(VqDemoPoint {
                step: r.step,
                commitment: r.commitment,
                perplexity: r.perplexity,
                restarts: total_restarts,
            });
        }
    }
    let center_error = centers
        .iter_rows()
        .map(|c| {
            state
                .codebook
                .iter_rows()
                .map(|e| squared_distance(c, e).as_f64().sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / cfg.codebook_size as f64;
    let report = VqDemoReport {
        codes: cfg.codebook_size,
        dim: cfg.dim,
        steps,
        trace,
        total_restarts,
        center_error,
    };
    Ok((state, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_is_deterministic_and_converges() {
        let cfg = VqConfig {
            codebook_size: 4,
            dim: 3,
            seed: 5,
            ..Default::default()
        };
        let (a, ra) = run_vq_demo::<f64>(&cfg, 300, 64).unwrap();
        let (b, _) = run_vq_demo::<f64>(&cfg, 300, 64).unwrap();
        assert_eq!(a, b);
        assert!(ra.trace.last().unwrap().commitment < ra.trace[0].commitment + 1e-9);
        assert!(a.codebook.is_finite());
    }
}
