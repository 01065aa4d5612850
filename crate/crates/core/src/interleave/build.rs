use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plan::{plan_spans, InterleaveConfig, SpanPlan};
use crate::corpus::{encode_text, special, TextDoc, TokenId, TokenSequence, Vocab, VocabLayout};
use crate::error::{ForgeError, Result};
use crate::rng::{derive_rng, derive_seed, fnv1a};
use crate::text2token::TextToToken;

/// Replaces every planned span of `doc` with `boa ∥ speech ∥ eoa`. Span `i`
/// is synthesized with a generator derived from `(span_seed, i)`.
pub fn build_interleaved<S: TextToToken + ?Sized>(
    doc: &[TokenId],
    plan: &SpanPlan,
    synth: &S,
    span_seed: u64,
) -> Result<TokenSequence> {
    if plan.doc_len != doc.len() {
        return Err(ForgeError::invalid(format!(
            "plan is for {} words, document has {}",
            plan.doc_len,
            doc.len()
        )));
    }
    plan.validate()?;
    let mut out = Vec::with_capacity(doc.len() * 2);
    let mut pos = 0;
    for (i, &(start, len)) in plan.spans.iter().enumerate() {
        out.extend_from_slice(&doc[pos..start]);
        let mut rng = derive_rng(span_seed, &[i as u64]);
        out.push(special::BEGIN_OF_AUDIO);
        out.extend(synth.synthesize(&doc[start..start + len], &mut rng)?);
        out.push(special::END_OF_AUDIO);
        pos = start + len;
    }
    out.extend_from_slice(&doc[pos..]);
    Ok(TokenSequence::new(out))
}

/// Content ids: everything except structural specials (padding, separators,
/// sentinels, role markers). `<unk>` stands for a word and counts as text.
#[inline]
pub fn is_content(layout: &VocabLayout, id: TokenId) -> bool {
    !layout.is_special(id) || id == special::UNK
}

/// Speech and content token counts of one sequence.
pub fn count_speech(ids: &[TokenId], layout: &VocabLayout) -> (u64, u64) {
    let mut speech = 0;
    let mut content = 0;
    for &id in ids {
        if is_content(layout, id) {
            content += 1;
            if layout.is_speech(id) {
                speech += 1;
            }
        }
    }
    (speech, content)
}

/// Share of speech ids among content ids; 0 for an empty sequence.
pub fn measure_speech_ratio(ids: &[TokenId], layout: &VocabLayout) -> f64 {
    let (s, c) = count_speech(ids, layout);
    if c == 0 {
        0.0
    } else {
        s as f64 / c as f64
    }
}

/// Sidecar statistics of an interleaving run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InterleaveStats {
    pub eta: f64,
    pub lambda: f64,
    pub docs: u64,
    pub words: u64,
    pub covered_words: u64,
    pub spans: u64,
    pub short_docs: u64,
    pub truncated_spans: u64,
    /// Poisson draws (after the 0→1 mapping) and their sum, before clamping.
    pub draws: u64,
    pub draw_sum: u64,
    pub span_count_histogram: BTreeMap<usize, u64>,
    /// Mean of per-document coverage.
    pub mean_coverage: f64,
    /// Covered words over all words.
    pub pooled_coverage: f64,
    pub speech_tokens: u64,
    pub content_tokens: u64,
    pub output_tokens: u64,
    pub speech_ratio: f64,
}

impl InterleaveStats {
    pub fn mean_draw_length(&self) -> f64 {
        if self.draws == 0 {
            0.0
        } else {
            self.draw_sum as f64 / self.draws as f64
        }
    }
}

/// One interleaved document with the plan that produced it.
#[derive(Debug, Clone)]
pub struct InterleavedDoc {
    pub id: String,
    pub plan: SpanPlan,
    pub raw_draws: Vec<usize>,
    pub sequence: TokenSequence,
}

#[derive(Debug, Clone)]
pub struct InterleavedCorpus {
    pub docs: Vec<InterleavedDoc>,
    pub stats: InterleaveStats,
}

impl InterleavedCorpus {
    pub fn sequences(&self) -> Vec<TokenSequence> {
        self.docs.iter().map(|d| d.sequence.clone()).collect()
    }
}

/// Interleaves a single encoded document with generators derived from
/// `(cfg.seed, doc id)`.
pub fn interleave_doc<S: TextToToken + ?Sized>(
    id: &str,
    ids: &[TokenId],
    cfg: &InterleaveConfig,
    synth: &S,
) -> Result<InterleavedDoc> {
    let key = fnv1a(id.as_bytes());
    let mut rng = derive_rng(cfg.seed, &[key, u64::MAX]);
    let (plan, drawn) = plan_spans(ids.len(), cfg, &mut rng)?;
    let sequence = build_interleaved(ids, &plan, synth, derive_seed(cfg.seed, &[key]))?;
    Ok(InterleavedDoc {
        id: id.to_string(),
        plan,
        raw_draws: drawn.raw,
        sequence,
    })
}

/// Interleaves a corpus. Documents are processed in parallel on the current
/// rayon pool; output order and content do not depend on the schedule.
/// Empty documents are skipped.
pub fn interleave_corpus<S: TextToToken + Sync + ?Sized>(
    docs: &[TextDoc],
    vocab: &Vocab,
    synth: &S,
    cfg: &InterleaveConfig,
) -> Result<InterleavedCorpus> {
    cfg.validate()?;
    let layout = vocab.layout();
    let out: Vec<Option<InterleavedDoc>> = docs
        .par_iter()
        .map(|doc| {
            let ids = encode_text(doc, vocab).ids;
            if ids.is_empty() {
                return Ok(None);
            }
            interleave_doc(&doc.id, &ids, cfg, synth).map(Some)
        })
        .collect::<Result<_>>()?;
    let docs: Vec<InterleavedDoc> = out.into_iter().flatten().collect();
    let stats = summarize(&docs, &layout, cfg);
    Ok(InterleavedCorpus { docs, stats })
}

pub fn summarize(docs: &[InterleavedDoc], layout: &VocabLayout, cfg: &InterleaveConfig) -> InterleaveStats {
    let mut s = InterleaveStats {
        eta: cfg.eta,
        lambda: cfg.lambda,
        ..Default::default()
    };
    let mut coverage_sum = 0.0;
    for d in docs {
        s.docs += 1;
        s.words += d.plan.doc_len as u64;
        s.covered_words += d.plan.covered() as u64;
        s.spans += d.plan.spans.len() as u64;
        s.truncated_spans += d.plan.truncated as u64;
        if d.raw_draws.is_empty() {
            s.short_docs += 1;
        }
        s.draws += d.raw_draws.len() as u64;
        s.draw_sum += d.raw_draws.iter().sum::<usize>() as u64;
        *s.span_count_histogram.entry(d.plan.spans.len()).or_default() += 1;
        coverage_sum += d.plan.coverage();
        let (sp, c) = count_speech(&d.sequence.ids, layout);
        s.speech_tokens += sp;
        s.content_tokens += c;
        s.output_tokens += d.sequence.len() as u64;
    }
    if s.docs > 0 {
        s.mean_coverage = coverage_sum / s.docs as f64;
        s.pooled_coverage = s.covered_words as f64 / s.words as f64;
    }
    if s.content_tokens > 0 {
        s.speech_ratio = s.speech_tokens as f64 / s.content_tokens as f64;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text2token::{ExpansionConfig, OracleSynth, UnitLexicon};

    fn setup(words: &[&str], factor: u32) -> (Vocab, OracleSynth) {
        let vocab = Vocab::from_words(words.iter().map(|w| w.to_string()).collect()).unwrap();
        let exp = ExpansionConfig { factor, jitter: 0.0 };
        let lex = UnitLexicon::build(words.iter().copied(), 64, 2, exp).unwrap();
        let vocab = vocab.extend_with_speech(64);
        let synth = OracleSynth::new(&lex, &vocab, exp).unwrap();
        (vocab, synth)
    }

    #[test]
    fn hand_traced_example() {
        let (vocab, synth) = setup(&["ab", "cd", "ef"], 2);
        let doc: Vec<u32> = ["ab", "cd", "ef"].iter().map(|w| vocab.word_id(w)).collect();
        let plan = SpanPlan {
            doc_len: 3,
            spans: vec![(1, 1)],
            truncated: 0,
        };
        let out = build_interleaved(&doc, &plan, &synth, 0).unwrap();
        let s = vocab.layout().speech_id(synth.units(doc[1])[0]);
        assert_eq!(
            out.ids,
            vec![doc[0], special::BEGIN_OF_AUDIO, s, s, special::END_OF_AUDIO, doc[2]]
        );
    }

    #[test]
    fn empty_and_full_plans() {
        let (vocab, synth) = setup(&["ab", "cd", "ef"], 2);
        let layout = vocab.layout();
        let doc: Vec<u32> = vec![9, 10, 11];
        let empty = SpanPlan {
            doc_len: 3,
            ..Default::default()
        };
        assert_eq!(build_interleaved(&doc, &empty, &synth, 0).unwrap().ids, doc);
        let full = SpanPlan {
            doc_len: 3,
            spans: vec![(0, 3)],
            truncated: 0,
        };
        let out = build_interleaved(&doc, &full, &synth, 0).unwrap();
        assert!(out.ids.iter().all(|&id| !layout.is_text(id)));
        assert_eq!(measure_speech_ratio(&out.ids, &layout), 1.0);
        assert_eq!(measure_speech_ratio(&doc, &layout), 0.0);
        assert_eq!(measure_speech_ratio(&[], &layout), 0.0);
    }

    #[test]
    fn corpus_is_deterministic_across_thread_counts() {
        let words = ["ba", "ko", "mi", "tu", "ze", "la"];
        let (vocab, synth) = setup(&words, 2);
        let docs: Vec<TextDoc> = (0..40)
            .map(|i| {
                let text: Vec<&str> = (0..(5 + i % 30)).map(|j| words[(i * 7 + j * 3) % 6]).collect();
                TextDoc::new(format!("d{i}"), text.join(" "))
            })
            .collect();
        let cfg = InterleaveConfig::default();
        let a = interleave_corpus(&docs, &vocab, &synth, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let b = pool.install(|| interleave_corpus(&docs, &vocab, &synth, &cfg)).unwrap();
        assert_eq!(a.sequences(), b.sequences());
        assert_eq!(a.stats, b.stats);
        assert_eq!(a.stats.docs, 40);
    }
}
