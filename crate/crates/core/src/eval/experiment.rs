use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::items::{ContinuationItem, Setting};
use super::score::{continuation_accuracy, qa_accuracy, AccuracyReport};
use super::world::{gen_toy_world, ToyWorld, WorldConfig};
use crate::corpus::{encode_text, special, TokenSequence};
use crate::error::{ForgeError, Result};
use crate::interleave::{interleave_corpus, InterleaveConfig, InterleaveStats};
use crate::mixer::{
    compose_mixture, compose_repeated, minimal_budget, pack_sequences, pack_whole, schedule_rows, supervised_pair_format, Direction,
    MixReport, MixtureSpec, Source, SourceKind, SourceSpec,
};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::text2token::{ParallelPair, TextToToken};
use crate::tinylm::{train, LmConfig, Params, StepLog, TrainConfig};

/// Everything one toy training run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub interleave: InterleaveConfig,
    /// Distinct interleaved rows in the pool; 0 is the no-interleaving
    /// control.
    pub interleave_rows: usize,
    /// Interleave every fact instead of the training facts only.
    pub interleave_all_facts: bool,
    /// Shuffled text passes over all facts in the text pool.
    pub text_passes: usize,
    pub speech_sentences: usize,
    /// Supervised pairs drawn; pairs longer than a row are dropped.
    pub asr_pairs: usize,
    pub tts_pairs: usize,
    pub sentence_len: (usize, usize),
    pub seq_len: usize,
    pub text_ratio: f64,
    /// Rows trained on. `None` takes the smallest budget that holds every
    /// one-epoch source plus one pass over the interleaved pool. A control
    /// run without interleaved rows repeats its mixture up to this budget.
    pub budget_sequences: Option<usize>,
    pub lm: LmConfig,
    pub train: TrainConfig,
    pub normalize: bool,
    pub qa_max_gen: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: WorldConfig::default(),
            interleave: InterleaveConfig::default(),
            interleave_rows: 16_000,
            interleave_all_facts: false,
            text_passes: 64,
            speech_sentences: 200,
            asr_pairs: 200,
            tts_pairs: 200,
            sentence_len: (3, 8),
            seq_len: 64,
            text_ratio: 0.3,
            budget_sequences: Some(32_000),
            lm: LmConfig {
                n_layers: 2,
                dim: 64,
                n_heads: 4,
                head_dim: 16,
                ffn_dim: 128,
                max_seq_len: 64,
                ..Default::default()
            },
            train: TrainConfig {
                batch_size: 16,
                shuffle: false,
                ..Default::default()
            },
            normalize: true,
            qa_max_gen: 32,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.interleave.validate()?;
        if self.text_passes == 0 {
            return Err(ForgeError::config("experiment.text_passes", "must be >= 1"));
        }
        let (lo, hi) = self.sentence_len;
        if lo == 0 || lo > hi {
            return Err(ForgeError::config("experiment.sentence_len", "need 1 <= min <= max"));
        }
        if self.seq_len < 8 || self.seq_len > self.lm.max_seq_len {
            return Err(ForgeError::config(
                "experiment.seq_len",
                format!("must lie in [8, lm.max_seq_len = {}]", self.lm.max_seq_len),
            ));
        }
        if !(0.0..1.0).contains(&self.text_ratio) {
            return Err(ForgeError::config("experiment.text_ratio", "must lie in [0, 1)"));
        }
        if self.budget_sequences == Some(0) {
            return Err(ForgeError::config("experiment.budget_sequences", "must be >= 1"));
        }
        Ok(())
    }

    /// Copy with every component seed derived from `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.world.seed = derive_seed(seed, &[1]);
        c.interleave.seed = derive_seed(seed, &[2]);
        c.lm.seed = derive_seed(seed, &[3]);
        c.train.seed = derive_seed(seed, &[4]);
        c
    }
}

/// The sources of one run, packed into fixed-length rows.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub world: ToyWorld,
    pub sources: Vec<Source>,
    pub interleave_stats: Option<InterleaveStats>,
    pub spec: MixtureSpec,
    /// Rows in the training stream.
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub params: usize,
    pub steps: usize,
    pub tokens_seen: usize,
    pub final_loss: Option<f64>,
    pub diverged_at: Option<usize>,
    pub mix: MixReport,
    pub interleave: Option<InterleaveStats>,
    /// Continuation accuracy on facts never seen with speech.
    pub continuation: AccuracyReport,
    /// Continuation accuracy on facts that interleaved data may carry.
    pub seen: AccuracyReport,
    pub qa: AccuracyReport,
    /// Mean of the T→S and S→T continuation accuracies.
    pub cross_modal: f64,
}

fn speech_block(world: &ToyWorld, text: &[u32], seed: u64, i: usize) -> Vec<u32> {
    let mut rng = crate::rng::derive_rng(seed, &[i as u64]);
    world.synth.synthesize(text, &mut rng).expect("world ids are text ids")
}

/// Builds the world and every training source.
pub fn build_sources(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    cfg.validate()?;
    let world = gen_toy_world(&cfg.world)?;
    let seq_len = cfg.seq_len;
    let all: Vec<usize> = (0..world.facts.len()).collect();

    let text_docs = world.fact_docs(&all, cfg.text_passes, derive_seed(cfg.seed, &[0x10]));
    let text_seqs: Vec<TokenSequence> = text_docs.iter().map(|d| encode_text(d, &world.vocab)).collect();
    let text_rows = pack_sequences(&text_seqs, seq_len, true)?;

    let (lo, hi) = cfg.sentence_len;
    let sentences = |n: usize, tag: u64| world.filler_sentences(n, lo, hi, derive_seed(cfg.seed, &[0x20, tag]));
    let speech_seqs: Vec<TokenSequence> = sentences(cfg.speech_sentences, 0)
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut ids = vec![special::BEGIN_OF_AUDIO];
            ids.extend(speech_block(&world, s, derive_seed(cfg.seed, &[0x21]), i));
            ids.push(special::END_OF_AUDIO);
            TokenSequence::new(ids)
        })
        .collect();
    let pairs = |n: usize, tag: u64, dir: Direction| -> Result<Vec<TokenSequence>> {
        sentences(n, tag)
            .into_iter()
            .enumerate()
            .map(|(i, text)| {
                let speech = speech_block(&world, &text, derive_seed(cfg.seed, &[0x22, tag]), i);
                supervised_pair_format(&ParallelPair { text, speech }, dir)
            })
            .filter(|s| s.as_ref().map_or(true, |s| s.len() <= seq_len))
            .collect()
    };
    let asr = pairs(cfg.asr_pairs, 1, Direction::Asr)?;
    let tts = pairs(cfg.tts_pairs, 2, Direction::Tts)?;

    let mut sources = vec![Source {
        name: "text".into(),
        kind: SourceKind::Text,
        rows: text_rows,
    }];
    for (name, kind, rows) in [
        ("speech", SourceKind::Speech, pack_sequences(&speech_seqs, seq_len, true)?),
        ("asr", SourceKind::SupervisedAsr, pack_whole(&asr, seq_len)?),
        ("tts", SourceKind::SupervisedTts, pack_whole(&tts, seq_len)?),
    ] {
        if !rows.is_empty() {
            sources.push(Source {
                name: name.into(),
                kind,
                rows,
            });
        }
    }
    let epoch_rows: usize = sources.iter().filter(|s| s.kind.one_epoch()).map(|s| s.rows.len()).sum();

    let mut interleave_stats = None;
    if cfg.interleave_rows > 0 {
        let subset = if cfg.interleave_all_facts {
            all.clone()
        } else {
            world.train_facts.clone()
        };
        if subset.is_empty() {
            return Err(ForgeError::config("world.eval_fraction", "no facts left to interleave"));
        }
        // Fresh passes (new span draws each time) until the pool covers the
        // requested rows, so the schedule repeats no interleaved row.
        let mut rows = Vec::new();
        let mut stats: Option<InterleaveStats> = None;
        let mut pass = 0u64;
        while rows.len() < cfg.interleave_rows {
            let docs = world.fact_docs(&subset, 1, derive_seed(cfg.seed, &[0x30, pass]));
            let icfg = InterleaveConfig {
                seed: derive_seed(cfg.interleave.seed, &[pass]),
                ..cfg.interleave
            };
            let corpus = interleave_corpus(&docs, &world.vocab, &world.synth, &icfg)?;
            rows.extend(pack_sequences(&corpus.sequences(), seq_len, true)?);
            stats = Some(match stats {
                None => corpus.stats,
                Some(s) => merge_stats(s, corpus.stats),
            });
            pass += 1;
        }
        rows.truncate(cfg.interleave_rows);
        interleave_stats = stats;
        sources.push(Source {
            name: "interleaved".into(),
            kind: SourceKind::Interleaved,
            rows,
        });
    }
    let tight = minimal_budget(epoch_rows + cfg.interleave_rows, cfg.text_ratio)?;
    let budget = cfg.budget_sequences.unwrap_or(tight);
    let mix_budget = if cfg.interleave_rows > 0 { budget } else { tight.max(1) };
    let spec = MixtureSpec {
        seq_len,
        batch_size: cfg.train.batch_size,
        budget_sequences: mix_budget,
        text_ratio: cfg.text_ratio,
        seed: derive_seed(cfg.seed, &[0x40]),
        sources: sources
            .iter()
            .map(|s| SourceSpec {
                name: s.name.clone(),
                kind: s.kind,
                path: None,
            })
            .collect(),
    };
    Ok(ExperimentData {
        world,
        sources,
        interleave_stats,
        spec,
        budget,
    })
}

fn merge_stats(a: InterleaveStats, b: InterleaveStats) -> InterleaveStats {
    let mut hist = a.span_count_histogram.clone();
    for (k, v) in &b.span_count_histogram {
        *hist.entry(*k).or_default() += v;
    }
    let docs = a.docs + b.docs;
    let words = a.words + b.words;
    let covered = a.covered_words + b.covered_words;
    let speech = a.speech_tokens + b.speech_tokens;
    let content = a.content_tokens + b.content_tokens;
    InterleaveStats {
        eta: a.eta,
        lambda: a.lambda,
        docs,
        words,
        covered_words: covered,
        spans: a.spans + b.spans,
        short_docs: a.short_docs + b.short_docs,
        truncated_spans: a.truncated_spans + b.truncated_spans,
        draws: a.draws + b.draws,
        draw_sum: a.draw_sum + b.draw_sum,
        span_count_histogram: hist,
        mean_coverage: (a.mean_coverage * a.docs as f64 + b.mean_coverage * b.docs as f64) / docs.max(1) as f64,
        pooled_coverage: covered as f64 / words.max(1) as f64,
        speech_tokens: speech,
        content_tokens: content,
        output_tokens: a.output_tokens + b.output_tokens,
        speech_ratio: speech as f64 / content.max(1) as f64,
    }
}

/// Trains a fresh model on the composed schedule and evaluates it on the
/// held-out facts.
pub fn run_experiment<T: Scalar>(
    cfg: &ExperimentConfig,
    on_step: impl FnMut(&StepLog),
) -> Result<(Params<T>, ExperimentReport)> {
    let data = build_sources(cfg)?;
    let schedule = if data.spec.budget_sequences == data.budget {
        compose_mixture(&data.spec, &data.sources)?
    } else {
        compose_repeated(&data.spec, &data.sources, data.budget)?
    };
    let rows = schedule_rows(&schedule, &data.sources);
    let steps = rows.len().div_ceil(cfg.train.batch_size);
    let lm = LmConfig {
        vocab_size: data.world.vocab.layout().size() as usize,
        max_seq_len: cfg.lm.max_seq_len.max(cfg.seq_len),
        ..cfg.lm.clone()
    };
    let tcfg = TrainConfig {
        steps,
        shuffle: false,
        ..cfg.train.clone()
    };
    let params = Params::<T>::init(&lm)?;
    let outcome = train(params, &rows, &tcfg, on_step)?;
    let report = evaluate_run(cfg, &data, &outcome.params, &schedule.report, &outcome)?;
    Ok((outcome.params, report))
}

fn evaluate_run<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    params: &Params<T>,
    mix: &MixReport,
    outcome: &crate::tinylm::TrainOutcome<T>,
) -> Result<ExperimentReport> {
    let world = &data.world;
    let items: Vec<ContinuationItem> = world.items.clone();
    let continuation = continuation_accuracy(params, &items, cfg.normalize)?;
    let seen_items = world
        .items_for(&world.train_facts, &mut crate::rng::derive_rng(cfg.seed, &[0x50]))
        .0;
    let seen = if seen_items.is_empty() {
        AccuracyReport::new()
    } else {
        continuation_accuracy(params, &seen_items, cfg.normalize)?
    };
    let qa = qa_accuracy(params, &world.qa, &world.vocab.layout(), cfg.qa_max_gen)?;
    let cross_modal = cross_modal_mean(&continuation);
    Ok(ExperimentReport {
        seed: cfg.seed,
        params: params.num_params(),
        steps: outcome.losses.len(),
        tokens_seen: outcome.tokens_seen,
        final_loss: outcome.final_loss(),
        diverged_at: outcome.diverged_at,
        mix: mix.clone(),
        interleave: data.interleave_stats.clone(),
        continuation,
        seen,
        qa,
        cross_modal,
    })
}

/// Mean of the T→S and S→T accuracies present in `report`.
pub fn cross_modal_mean(report: &AccuracyReport) -> f64 {
    let vals: Vec<f64> = [Setting::TextToSpeech, Setting::SpeechToText]
        .iter()
        .filter_map(|s| report.get(s.code()).map(|a| a.accuracy))
        .collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Per-setting accuracies keyed by setting code, for compact tables.
pub fn accuracy_row(report: &AccuracyReport) -> BTreeMap<String, f64> {
    report.iter().map(|(k, v)| (k.clone(), v.accuracy)).collect()
}
