use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::items::{ContinuationItem, QaItem, Setting};
use crate::corpus::{special, VocabLayout};
use crate::error::{ForgeError, Result};
use crate::rng::derive_rng;
use crate::scalar::Scalar;
use crate::tinylm::{generate, score_continuation, Params, Sampling};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// 95% Wilson interval.
    pub ci_low: f64,
    pub ci_high: f64,
}

impl SettingAccuracy {
    pub fn new(correct: usize, total: usize) -> Self {
        let (ci_low, ci_high) = wilson_interval(correct, total, 1.959964);
        SettingAccuracy {
            correct,
            total,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            ci_low,
            ci_high,
        }
    }
}

pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let denom = 1.0 + z * z / n_f;
    let centre = (p + z * z / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z * z / (4.0 * n_f * n_f)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub type AccuracyReport = BTreeMap<String, SettingAccuracy>;

fn aggregate<I: Iterator<Item = (Setting, bool)>>(outcomes: I) -> AccuracyReport {
    let mut counts: BTreeMap<Setting, (usize, usize)> = BTreeMap::new();
    for (s, ok) in outcomes {
        let c = counts.entry(s).or_default();
        c.0 += ok as usize;
        c.1 += 1;
    }
    counts
        .into_iter()
        .map(|(s, (k, n))| (s.code().to_string(), SettingAccuracy::new(k, n)))
        .collect()
}

/// Index of the highest score; ties go to the lowest index.
pub fn select_candidate(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Scores of every candidate (sum of log-probabilities, divided by the
/// candidate length when `normalize` is set).
pub fn candidate_scores<T: Scalar>(params: &Params<T>, item: &ContinuationItem, normalize: bool) -> Result<Vec<f64>> {
    item.validate()?;
    item.candidates
        .iter()
        .map(|c| {
            let s = score_continuation(params, &item.context, c)?;
            Ok(if normalize { s / c.len() as f64 } else { s })
        })
        .collect()
}

/// Per-setting share of items whose correct candidate wins.
pub fn continuation_accuracy<T: Scalar>(
    params: &Params<T>,
    items: &[ContinuationItem],
    normalize: bool,
) -> Result<AccuracyReport> {
    if items.is_empty() {
        return Err(ForgeError::invalid("no continuation items"));
    }
    let outcomes: Vec<(Setting, bool)> = items
        .par_iter()
        .map(|item| {
            let scores = candidate_scores(params, item, normalize)?;
            Ok((item.setting, select_candidate(&scores) == item.correct))
        })
        .collect::<Result<_>>()?;
    Ok(aggregate(outcomes.into_iter()))
}

/// Whether `needle` occurs contiguously in `hay`.
pub fn contains_run<T: PartialEq>(hay: &[T], needle: &[T]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// Judges a generated answer: the answer must appear contiguously, and
/// text-answer settings may not contain any speech id.
pub fn qa_correct(setting: Setting, generated: &[u32], answer: &[u32], layout: &VocabLayout) -> bool {
    if !setting.speech_output() && generated.iter().any(|&id| layout.is_speech(id)) {
        return false;
    }
    contains_run(generated, answer)
}

/// Greedy generation of up to `max_gen` tokens after each prompt. Text
/// answers stop at a separator, speech answers at end_of_audio.
pub fn qa_accuracy<T: Scalar>(
    params: &Params<T>,
    items: &[QaItem],
    layout: &VocabLayout,
    max_gen: usize,
) -> Result<AccuracyReport> {
    if items.is_empty() {
        return Err(ForgeError::invalid("no QA items"));
    }
    let outcomes: Vec<(Setting, bool)> = items
        .par_iter()
        .map(|item| {
            let stop = if item.setting.speech_output() {
                special::END_OF_AUDIO
            } else {
                special::SEP
            };
            let mut rng = derive_rng(0, &[0]);
            let out = generate(params, &item.prompt, max_gen, Some(stop), Sampling::Greedy, &mut rng)?;
            Ok((item.setting, qa_correct(item.setting, &out, &item.answer, layout)))
        })
        .collect::<Result<_>>()?;
    Ok(aggregate(outcomes.into_iter()))
}
