use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{special, TokenId, TokenSequence};
use crate::error::{ForgeError, Result};
use crate::rng::{derive_rng, derive_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Text,
    Speech,
    Interleaved,
    SupervisedAsr,
    SupervisedTts,
}

impl SourceKind {
    /// Sources that are seen exactly once over the schedule.
    pub fn one_epoch(self) -> bool {
        matches!(self, SourceKind::Speech | SourceKind::SupervisedAsr | SourceKind::SupervisedTts)
    }

    pub fn name(self) -> &'static str {
        match self {
            SourceKind::Text => "text",
            SourceKind::Speech => "speech",
            SourceKind::Interleaved => "interleaved",
            SourceKind::SupervisedAsr => "supervised_asr",
            SourceKind::SupervisedTts => "supervised_tts",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub name: String,
    pub kind: SourceKind,
    /// Where the CLI reads the source from; unused by the library.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSpec {
    pub seq_len: usize,
    pub batch_size: usize,
    /// Total number of rows in the schedule.
    pub budget_sequences: usize,
    pub text_ratio: f64,
    pub seed: u64,
    pub sources: Vec<SourceSpec>,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec {
            seq_len: 64,
            batch_size: 16,
            budget_sequences: 1000,
            text_ratio: 0.3,
            seed: 0,
            sources: Vec::new(),
        }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.text_ratio) {
            return Err(ForgeError::config(
                "mixture.text_ratio",
                format!("{} not in [0, 1]", self.text_ratio),
            ));
        }
        if self.seq_len < 2 {
            return Err(ForgeError::config("mixture.seq_len", "must be >= 2"));
        }
        if self.batch_size == 0 {
            return Err(ForgeError::config("mixture.batch_size", "must be >= 1"));
        }
        if self.budget_sequences == 0 {
            return Err(ForgeError::config("mixture.budget_sequences", "must be >= 1"));
        }
        Ok(())
    }

    /// Text rows among the first `rows` rows (cumulative rounding).
    pub fn text_rows_upto(&self, rows: usize) -> usize {
        (self.text_ratio * rows as f64 + 0.5).floor() as usize
    }
}

/// Packed rows of one source.
#[derive(Debug, Clone)]
pub struct Source {
    pub name: String,
    pub kind: SourceKind,
    pub rows: Vec<TokenSequence>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowRef {
    pub source: usize,
    pub row: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MixReport {
    pub budget_sequences: usize,
    pub batches: usize,
    pub seq_len: usize,
    pub rows_by_kind: BTreeMap<String, u64>,
    /// Non-padding tokens by kind.
    pub tokens_by_kind: BTreeMap<String, u64>,
    pub text_sequence_share: f64,
    pub text_token_share: f64,
    /// Largest |text rows − text_ratio·rows| over batches.
    pub max_batch_text_deviation: f64,
    /// Passes over each source (one-epoch sources must read exactly 1).
    pub epochs_by_source: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct Schedule {
    pub batches: Vec<Vec<RowRef>>,
    pub report: MixReport,
}

impl Schedule {
    pub fn rows(&self) -> impl Iterator<Item = &RowRef> {
        self.batches.iter().flatten()
    }
}

/// Smallest budget whose non-text share holds `one_epoch_rows` rows, i.e.
/// a schedule with no room left for interleaved data.
pub fn minimal_budget(one_epoch_rows: usize, text_ratio: f64) -> Result<usize> {
    if one_epoch_rows == 0 {
        return Ok(0);
    }
    if text_ratio >= 1.0 {
        return Err(ForgeError::Infeasible {
            reason: "text_ratio 1 leaves no room for other sources".into(),
            required_sequences: usize::MAX,
        });
    }
    let spec = MixtureSpec {
        text_ratio,
        ..Default::default()
    };
    let mut b = (one_epoch_rows as f64 / (1.0 - text_ratio)).floor() as usize;
    b = b.max(one_epoch_rows).saturating_sub(2);
    while b - spec.text_rows_upto(b) < one_epoch_rows {
        b += 1;
    }
    Ok(b)
}

struct Cycler {
    order: Vec<RowRef>,
    pos: usize,
    passes: usize,
    rng: Rng,
}

impl Cycler {
    fn new(pool: Vec<RowRef>, rng: Rng) -> Self {
        let mut c = Cycler {
            order: pool,
            pos: 0,
            passes: 0,
            rng,
        };
        c.order.shuffle(&mut c.rng);
        c
    }

    fn next(&mut self) -> RowRef {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.passes += 1;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Lays out `budget_sequences` rows in batches. Text takes `text_ratio` of
/// every batch by cumulative rounding; each one-epoch source is spread
/// uniformly over the non-text slots and read exactly once; interleaved rows
/// fill the rest. Text and interleaved pools cycle with fresh seeded orders.
pub fn compose_mixture(spec: &MixtureSpec, sources: &[Source]) -> Result<Schedule> {
    spec.validate()?;
    for s in sources {
        if let Some(r) = s.rows.iter().find(|r| r.len() != spec.seq_len) {
            return Err(ForgeError::invalid(format!(
                "source {} has a row of {} tokens, expected {}",
                s.name,
                r.len(),
                spec.seq_len
            )));
        }
    }
    let budget = spec.budget_sequences;
    let pool = |kind: SourceKind| -> Vec<RowRef> {
        sources
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == kind)
            .flat_map(|(i, s)| (0..s.rows.len()).map(move |r| RowRef { source: i, row: r }))
            .collect()
    };
    let text_pool = pool(SourceKind::Text);
    let inter_pool = pool(SourceKind::Interleaved);
    let epoch_sources: Vec<usize> = (0..sources.len()).filter(|&i| sources[i].kind.one_epoch()).collect();
    let epoch_total: usize = epoch_sources.iter().map(|&i| sources[i].rows.len()).sum();

    let text_total = spec.text_rows_upto(budget);
    let non_text = budget - text_total;
    if epoch_total > non_text {
        let required = minimal_budget(epoch_total, spec.text_ratio)?;
        return Err(ForgeError::Infeasible {
            reason: format!(
                "one-epoch sources hold {epoch_total} rows but only {non_text} non-text rows fit in {budget}"
            ),
            required_sequences: required,
        });
    }
    if text_total > 0 && text_pool.is_empty() {
        return Err(ForgeError::config("mixture.sources", "text_ratio > 0 needs a text source"));
    }
    let filler = non_text - epoch_total;
    if filler > 0 && inter_pool.is_empty() {
        return Err(ForgeError::config(
            "mixture.sources",
            format!("{filler} rows must be filled but no interleaved source is present"),
        ));
    }

    let mut text = Cycler::new(text_pool, derive_rng(spec.seed, &[0x7e, 0]));
    let mut inter = Cycler::new(inter_pool, derive_rng(spec.seed, &[0x7e, 1]));
    let mut epoch_orders: Vec<Vec<usize>> = epoch_sources
        .iter()
        .map(|&i| {
            let mut o: Vec<usize> = (0..sources[i].rows.len()).collect();
            o.shuffle(&mut derive_rng(spec.seed, &[0x7e, 2, i as u64]));
            o
        })
        .collect();
    epoch_orders.iter_mut().for_each(|o| o.reverse());
    let mut consumed = vec![0usize; epoch_sources.len()];

    let mut rows = Vec::with_capacity(budget);
    let mut non_text_seen = 0usize;
    let mut epoch_seen = 0usize;
    for r in 0..budget {
        if spec.text_rows_upto(r + 1) > spec.text_rows_upto(r) {
            rows.push(text.next());
            continue;
        }
        let j = non_text_seen;
        non_text_seen += 1;
        let epoch_slot = epoch_total > 0 && (epoch_total * (j + 1)) / non_text > (epoch_total * j) / non_text;
        if epoch_slot {
            // source with the largest lag behind its uniform share
            let i = epoch_seen;
            epoch_seen += 1;
            let mut best = None;
            let mut best_lag = f64::NEG_INFINITY;
            for (k, &s) in epoch_sources.iter().enumerate() {
                let n = sources[s].rows.len();
                if consumed[k] == n {
                    continue;
                }
                let lag = n as f64 * (i + 1) as f64 / epoch_total as f64 - consumed[k] as f64;
                if lag > best_lag {
                    best_lag = lag;
                    best = Some(k);
                }
            }
            let k = best.expect("epoch slots never exceed epoch rows");
            consumed[k] += 1;
            let row = epoch_orders[k].pop().expect("row available");
            rows.push(RowRef {
                source: epoch_sources[k],
                row,
            });
        } else {
            rows.push(inter.next());
        }
    }
    let batches: Vec<Vec<RowRef>> = rows.chunks(spec.batch_size).map(|c| c.to_vec()).collect();
    let report = build_report(spec, sources, &batches);
    Ok(Schedule { batches, report })
}

/// Fills `total` rows by concatenating independent compositions of `spec`
/// (cycle `c` uses a seed derived from `(spec.seed, c)`). One-epoch sources
/// are read once per cycle; a mixture without interleaved filler can thus be
/// stretched to a given compute budget.
pub fn compose_repeated(spec: &MixtureSpec, sources: &[Source], total: usize) -> Result<Schedule> {
    if spec.budget_sequences == 0 {
        return Err(ForgeError::config("mixture.budget_sequences", "must be > 0"));
    }
    let mut rows = Vec::with_capacity(total);
    let mut cycle = 0u64;
    while rows.len() < total {
        let s = MixtureSpec {
            seed: derive_seed(spec.seed, &[cycle]),
            ..spec.clone()
        };
        rows.extend(compose_mixture(&s, sources)?.rows().copied());
        cycle += 1;
    }
    rows.truncate(total);
    let out_spec = MixtureSpec {
        budget_sequences: total,
        ..spec.clone()
    };
    let batches: Vec<Vec<RowRef>> = rows.chunks(spec.batch_size).map(|c| c.to_vec()).collect();
    let report = build_report(&out_spec, sources, &batches);
    Ok(Schedule { batches, report })
}

fn build_report(spec: &MixtureSpec, sources: &[Source], batches: &[Vec<RowRef>]) -> MixReport {
    let mut report = MixReport {
        budget_sequences: spec.budget_sequences,
        batches: batches.len(),
        seq_len: spec.seq_len,
        ..Default::default()
    };
    let mut reads = vec![0u64; sources.len()];
    let mut text_tokens = 0u64;
    let mut all_tokens = 0u64;
    for batch in batches {
        let mut text_rows = 0usize;
        for r in batch {
            let s = &sources[r.source];
            reads[r.source] += 1;
            let toks = s.rows[r.row].ids.iter().filter(|&&id| id != special::PAD).count() as u64;
            *report.rows_by_kind.entry(s.kind.name().into()).or_default() += 1;
            *report.tokens_by_kind.entry(s.kind.name().into()).or_default() += toks;
            all_tokens += toks;
            if s.kind == SourceKind::Text {
                text_rows += 1;
                text_tokens += toks;
            }
        }
        let dev = (text_rows as f64 - spec.text_ratio * batch.len() as f64).abs();
        report.max_batch_text_deviation = report.max_batch_text_deviation.max(dev);
    }
    let text_rows = *report.rows_by_kind.get("text").unwrap_or(&0);
    report.text_sequence_share = text_rows as f64 / spec.budget_sequences as f64;
    report.text_token_share = if all_tokens == 0 {
        0.0
    } else {
        text_tokens as f64 / all_tokens as f64
    };
    for (s, &n) in sources.iter().zip(&reads) {
        let e = if s.rows.is_empty() {
            0.0
        } else {
            n as f64 / s.rows.len() as f64
        };
        report.epochs_by_source.insert(s.name.clone(), e);
    }
    report
}

/// One training batch with per-row source indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedBatch {
    pub tokens: Vec<TokenId>,
    pub mask: Vec<bool>,
    pub tags: Vec<usize>,
    pub rows: usize,
    pub seq_len: usize,
}

impl PackedBatch {
    pub fn row(&self, i: usize) -> (&[TokenId], &[bool]) {
        let r = i * self.seq_len..(i + 1) * self.seq_len;
        (&self.tokens[r.clone()], &self.mask[r])
    }

    pub fn sequences(&self) -> Vec<TokenSequence> {
        (0..self.rows)
            .map(|i| {
                let (t, m) = self.row(i);
                TokenSequence::with_mask(t.to_vec(), m.to_vec())
            })
            .collect()
    }
}

pub fn materialize(schedule: &Schedule, sources: &[Source], seq_len: usize) -> Vec<PackedBatch> {
    schedule
        .batches
        .iter()
        .map(|b| {
            let mut tokens = Vec::with_capacity(b.len() * seq_len);
            let mut mask = Vec::with_capacity(b.len() * seq_len);
            for r in b {
                let row = &sources[r.source].rows[r.row];
                tokens.extend_from_slice(&row.ids);
                mask.extend(row.mask_or_all());
            }
            PackedBatch {
                tokens,
                mask,
                tags: b.iter().map(|r| r.source).collect(),
                rows: b.len(),
                seq_len,
            }
        })
        .collect()
}

/// Rows of the schedule in training order.
pub fn schedule_rows(schedule: &Schedule, sources: &[Source]) -> Vec<TokenSequence> {
    schedule.rows().map(|r| sources[r.source].rows[r.row].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(n: usize, base: u32) -> Vec<TokenSequence> {
        (0..n).map(|i| TokenSequence::new(vec![base + i as u32; 4])).collect()
    }

    fn sources(text: usize, speech: usize, sup: usize, inter: usize) -> Vec<Source> {
        vec![
            Source {
                name: "text".into(),
                kind: SourceKind::Text,
                rows: rows(text, 100),
            },
            Source {
                name: "speech".into(),
                kind: SourceKind::Speech,
                rows: rows(speech, 1000),
            },
            Source {
                name: "asr".into(),
                kind: SourceKind::SupervisedAsr,
                rows: rows(sup, 2000),
            },
            Source {
                name: "inter".into(),
                kind: SourceKind::Interleaved,
                rows: rows(inter, 3000),
            },
        ]
    }

    fn spec(budget: usize) -> MixtureSpec {
        MixtureSpec {
            seq_len: 4,
            batch_size: 10,
            budget_sequences: budget,
            ..Default::default()
        }
    }

    #[test]
    fn worked_example_counts() {
        let s = compose_mixture(&spec(1000), &sources(50, 100, 100, 70)).unwrap();
        let r = &s.report;
        assert_eq!(r.rows_by_kind["text"], 300);
        assert_eq!(r.rows_by_kind["speech"], 100);
        assert_eq!(r.rows_by_kind["supervised_asr"], 100);
        assert_eq!(r.rows_by_kind["interleaved"], 500);
        assert_eq!(r.epochs_by_source["speech"], 1.0);
        assert_eq!(r.epochs_by_source["asr"], 1.0);
        assert!(r.max_batch_text_deviation <= 1.0);
    }

    #[test]
    fn one_epoch_rows_each_seen_once() {
        let srcs = sources(5, 37, 11, 9);
        let s = compose_mixture(&spec(203), &srcs).unwrap();
        for src in [1, 2] {
            let mut seen: Vec<usize> = s.rows().filter(|r| r.source == src).map(|r| r.row).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..srcs[src].rows.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn infeasible_reports_required_budget() {
        match compose_mixture(&spec(100), &sources(5, 60, 20, 5)) {
            Err(ForgeError::Infeasible { required_sequences, .. }) => {
                assert_eq!(required_sequences, minimal_budget(80, 0.3).unwrap());
                let ok = compose_mixture(&spec(required_sequences), &sources(5, 60, 20, 0)).unwrap();
                assert_eq!(ok.report.rows_by_kind.get("interleaved"), None);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pure_text_boundary() {
        let pure = MixtureSpec {
            text_ratio: 1.0,
            ..spec(50)
        };
        let s = compose_mixture(&pure, &sources(5, 0, 0, 0)).unwrap();
        assert_eq!(s.report.rows_by_kind["text"], 50);
        assert!(compose_mixture(&pure, &sources(5, 1, 0, 0)).is_err());
    }

    #[test]
    fn schedule_is_deterministic_and_seeded() {
        let srcs = sources(20, 30, 10, 40);
        let a = compose_mixture(&spec(300), &srcs).unwrap();
        let b = compose_mixture(&spec(300), &srcs).unwrap();
        assert_eq!(a.batches, b.batches);
        let c = compose_mixture(&MixtureSpec { seed: 9, ..spec(300) }, &srcs).unwrap();
        assert_ne!(a.batches, c.batches);
    }

    #[test]
    fn minimal_budget_is_tight() {
        for s in [1, 7, 70, 123, 1000] {
            let b = minimal_budget(s, 0.3).unwrap();
            let sp = spec(b);
            assert_eq!(b - sp.text_rows_upto(b), s);
            assert!(b - 1 - sp.text_rows_upto(b - 1) < s);
        }
    }

    #[test]
    fn materialized_tags_match_schedule() {
        let srcs = sources(20, 30, 10, 40);
        let s = compose_mixture(&spec(95), &srcs).unwrap();
        let batches = materialize(&s, &srcs, 4);
        assert_eq!(batches.len(), 10);
        assert_eq!(batches[9].rows, 5);
        for (b, plan) in batches.iter().zip(&s.batches) {
            for (i, r) in plan.iter().enumerate() {
                assert_eq!(b.tags[i], r.source);
                assert_eq!(b.row(i).0, &srcs[r.source].rows[r.row].ids[..]);
            }
        }
    }

    #[test]
    fn repeated_composition_reads_epoch_sources_once_per_cycle() {
        let mut srcs = sources(50, 20, 15, 0);
        srcs.pop();
        let per_cycle = minimal_budget(35, 0.3).unwrap();
        let s = compose_repeated(&spec(per_cycle), &srcs, 3 * per_cycle).unwrap();
        let r = &s.report;
        assert_eq!(s.rows().count(), 3 * per_cycle);
        assert_eq!(r.epochs_by_source["speech"], 3.0);
        assert_eq!(r.epochs_by_source["asr"], 3.0);
        assert_eq!(r.rows_by_kind["text"] as usize, 3 * spec(per_cycle).text_rows_upto(per_cycle));
        let first: Vec<RowRef> = s.rows().take(per_cycle).copied().collect();
        let second: Vec<RowRef> = s.rows().skip(per_cycle).take(per_cycle).copied().collect();
        assert_ne!(first, second);
    }
}
