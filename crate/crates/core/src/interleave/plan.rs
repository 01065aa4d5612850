use rand::seq::index::sample;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterleaveConfig {
    /// Target fraction of words replaced by speech.
    pub eta: f64,
    /// Mean span length in words.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for InterleaveConfig {
    fn default() -> Self {
        InterleaveConfig {
            eta: 0.3,
            lambda: 10.0,
            seed: 0,
        }
    }
}

impl InterleaveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(ForgeError::config("interleave.eta", format!("{} not in (0, 1]", self.eta)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(ForgeError::config("interleave.lambda", format!("{} not in (0, inf)", self.lambda)));
        }
        Ok(())
    }
}

/// Lengths drawn for one document, before and after clamping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrawnLengths {
    pub lengths: Vec<usize>,
    /// Poisson draws (after the 0→1 mapping) before clamping to the
    /// document; empty for short documents, which skip the Poisson path.
    pub raw: Vec<usize>,
}

/// Draws span lengths until they cover `eta * doc_len` words.
///
/// A draw of 0 counts as 1. The draw that crosses the target is kept whole,
/// except that the total never exceeds `doc_len`. Documents shorter than
/// `1/eta` get one span of `max(1, round(eta * doc_len))` words.
pub fn draw_span_lengths(doc_len: usize, cfg: &InterleaveConfig, rng: &mut Rng) -> Result<DrawnLengths> {
    cfg.validate()?;
    if doc_len == 0 {
        return Err(ForgeError::invalid("document length must be >= 1"));
    }
    let target = cfg.eta * doc_len as f64;
    if (doc_len as f64) < 1.0 / cfg.eta {
        let n = (target.round() as usize).clamp(1, doc_len);
        return Ok(DrawnLengths {
            lengths: vec![n],
            raw: Vec::new(),
        });
    }
    let poisson = Poisson::new(cfg.lambda).map_err(|e| ForgeError::config("interleave.lambda", e.to_string()))?;
    let mut raw = Vec::new();
    let mut sum = 0usize;
    while (sum as f64) < target {
        let x = (poisson.sample(rng) as usize).max(1);
        raw.push(x);
        sum += x;
    }
    let mut lengths = raw.clone();
    if sum > doc_len {
        let last = lengths.last_mut().expect("at least one draw");
        *last -= sum - doc_len;
    }
    Ok(DrawnLengths { lengths, raw })
}

/// Non-overlapping spans `(start, len)` in word units, in document order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpanPlan {
    pub doc_len: usize,
    pub spans: Vec<(usize, usize)>,
    /// Spans dropped from the end because the lengths did not fit.
    pub truncated: usize,
}

impl SpanPlan {
    pub fn covered(&self) -> usize {
        self.spans.iter().map(|s| s.1).sum()
    }

    pub fn coverage(&self) -> f64 {
        if self.doc_len == 0 {
            0.0
        } else {
            self.covered() as f64 / self.doc_len as f64
        }
    }

    /// Checks ordering, bounds, positivity and non-overlap.
    pub fn validate(&self) -> Result<()> {
        let mut end = 0usize;
        for (i, &(start, len)) in self.spans.iter().enumerate() {
            if len == 0 {
                return Err(ForgeError::invalid(format!("span {i} is empty")));
            }
            if start < end {
                return Err(ForgeError::invalid(format!("span {i} overlaps or is out of order")));
            }
            end = start + len;
            if end > self.doc_len {
                return Err(ForgeError::invalid(format!("span {i} runs past the document")));
            }
        }
        Ok(())
    }
}

/// Uniformly random placement of the spans in the given order.
///
/// The `doc_len - Σ lengths` free words are split over the `n + 1` gaps by
/// picking the span slots as a uniform `n`-subset of `free + n` positions.
/// Lengths that do not fit are dropped from the end and counted.
pub fn place_spans(doc_len: usize, lengths: &[usize], rng: &mut Rng) -> SpanPlan {
    let mut lengths: Vec<usize> = lengths.iter().copied().filter(|&l| l > 0).collect();
    let mut truncated = 0;
    while lengths.iter().sum::<usize>() > doc_len {
        lengths.pop();
        truncated += 1;
    }
    let n = lengths.len();
    let free = doc_len - lengths.iter().sum::<usize>();
    let mut slots = sample(rng, free + n, n).into_vec();
    slots.sort_unstable();
    let mut spans = Vec::with_capacity(n);
    let mut used = 0;
    for (i, (&slot, &len)) in slots.iter().zip(&lengths).enumerate() {
        spans.push((slot - i + used, len));
        used += len;
    }
    SpanPlan {
        doc_len,
        spans,
        truncated,
    }
}

/// Draw and place in one step.
pub fn plan_spans(doc_len: usize, cfg: &InterleaveConfig, rng: &mut Rng) -> Result<(SpanPlan, DrawnLengths)> {
    let drawn = draw_span_lengths(doc_len, cfg, rng)?;
    Ok((place_spans(doc_len, &drawn.lengths, rng), drawn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn config_bounds() {
        for eta in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(InterleaveConfig { eta, ..Default::default() }.validate().is_err());
        }
        assert!(InterleaveConfig { eta: 1.0, ..Default::default() }.validate().is_ok());
        assert!(InterleaveConfig { lambda: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn lengths_reach_target_and_fit() {
        let cfg = InterleaveConfig::default();
        let mut rng = seeded(1);
        for doc_len in [4, 5, 10, 37, 100, 1000] {
            for _ in 0..200 {
                let d = draw_span_lengths(doc_len, &cfg, &mut rng).unwrap();
                let total: usize = d.lengths.iter().sum();
                assert!(total <= doc_len);
                assert!(total as f64 >= (0.3 * doc_len as f64).min(doc_len as f64));
                assert!(d.lengths.iter().all(|&l| l >= 1));
            }
        }
    }

    #[test]
    fn short_docs_get_one_rounded_span() {
        let cfg = InterleaveConfig::default();
        let mut rng = seeded(0);
        assert_eq!(draw_span_lengths(1, &cfg, &mut rng).unwrap().lengths, vec![1]);
        assert_eq!(draw_span_lengths(3, &cfg, &mut rng).unwrap().lengths, vec![1]);
        let tenth = InterleaveConfig { eta: 0.1, ..cfg };
        assert_eq!(draw_span_lengths(9, &tenth, &mut rng).unwrap().lengths, vec![1]);
    }

    /// Exact expected number of draws for a target of `t` words: the sum
    /// over n of P(S_n < t), with S_n a sum of n shifted Poisson draws.
    fn exact_expected_count(t: usize, lambda: f64) -> f64 {
        let mut pmf: Vec<f64> = (0..t)
            .map(|k| (-lambda + k as f64 * lambda.ln() - (1..=k).map(|i| (i as f64).ln()).sum::<f64>()).exp())
            .collect();
        pmf[1] += pmf[0];
        pmf[0] = 0.0;
        let mut below = vec![0.0; t];
        below[0] = 1.0;
        let mut expected = 0.0;
        for _ in 0..200 {
            expected += below.iter().sum::<f64>();
            let mut next = vec![0.0; t];
            for (s, &v) in below.iter().enumerate() {
                for k in 1..t - s {
                    next[s + k] += v * pmf[k];
                }
            }
            below = next;
        }
        expected
    }

    #[test]
    fn mean_span_count_near_three() {
        let exact = exact_expected_count(30, 10.0);
        assert!((2.5..=3.5).contains(&exact), "{exact}");
        let cfg = InterleaveConfig::default();
        let mut rng = seeded(7);
        let trials = 10_000;
        let counts: Vec<f64> = (0..trials)
            .map(|_| draw_span_lengths(100, &cfg, &mut rng).unwrap().lengths.len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / trials as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let se = (var / trials as f64).sqrt();
        assert!((mean - exact).abs() < 4.0 * se, "mean {mean}, exact {exact}, se {se}");
    }

    #[test]
    fn draws_are_seeded() {
        let cfg = InterleaveConfig::default();
        let a = draw_span_lengths(500, &cfg, &mut seeded(3)).unwrap();
        let b = draw_span_lengths(500, &cfg, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiling_when_lengths_fill_doc() {
        let plan = place_spans(6, &[2, 1, 3], &mut seeded(0));
        assert_eq!(plan.spans, vec![(0, 2), (2, 1), (3, 3)]);
        assert_eq!(plan.truncated, 0);
    }

    #[test]
    fn no_overlap_over_many_samples() {
        let mut rng = seeded(11);
        for _ in 0..10_000 {
            let plan = place_spans(10, &[3, 3], &mut rng);
            plan.validate().unwrap();
            assert!(plan.spans[1].0 >= plan.spans[0].0 + 3);
        }
    }

    #[test]
    fn placement_is_uniform() {
        let mut rng = seeded(5);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[place_spans(5, &[2], &mut rng).spans[0].0] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn oversize_lengths_truncate_from_end() {
        let plan = place_spans(5, &[3, 2, 4], &mut seeded(0));
        assert_eq!(plan.truncated, 1);
        assert_eq!(plan.spans, vec![(0, 3), (3, 2)]);
    }
}
