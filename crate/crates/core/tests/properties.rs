use forge_core::corpus::{decode_shard, encode_shard, special, TokenSequence, Vocab};
use forge_core::eval::{format_dialogue, parse_dialogue, DialogueMode};
use forge_core::interleave::{build_interleaved, count_speech, plan_spans, InterleaveConfig};
use forge_core::mixer::{compose_mixture, pack_sequences, pack_whole, MixtureSpec, Source, SourceKind, SourceSpec};
use forge_core::quantizer::{Matrix, VqConfig, VqState};
use forge_core::rng::seeded;
use forge_core::text2token::{edit_distance, ExpansionConfig, OracleSynth, TextToToken, UnitLexicon};
use forge_core::tinylm::{decode_checkpoint, encode_checkpoint, LmConfig, Params};
use proptest::prelude::*;

fn toy_synth(factor: u32) -> (Vocab, OracleSynth) {
    let words: Vec<String> = ["ba", "kodu", "mite", "tu", "zelo", "la", "nori", "pes"]
        .iter()
        .map(|w| w.to_string())
        .collect();
    let exp = ExpansionConfig { factor, jitter: 0.0 };
    let lex = UnitLexicon::build(words.iter().map(String::as_str), 32, 2, exp).unwrap();
    let vocab = Vocab::from_words(words).unwrap().extend_with_speech(32);
    let synth = OracleSynth::new(&lex, &vocab, exp).unwrap();
    (vocab, synth)
}

fn docs_strategy() -> impl Strategy<Value = Vec<TokenSequence>> {
    prop::collection::vec(prop::collection::vec(10u32..60, 1..30), 0..20)
        .prop_map(|d| d.into_iter().map(TokenSequence::new).collect())
}

proptest! {
    #[test]
    fn span_plans_are_disjoint_and_in_bounds(
        doc_len in 1usize..400,
        eta in 0.01f64..=1.0,
        lambda in 0.5f64..30.0,
        seed in any::<u64>(),
    ) {
        let cfg = InterleaveConfig { eta, lambda, seed };
        let (plan, drawn) = plan_spans(doc_len, &cfg, &mut seeded(seed)).unwrap();
        let mut end = 0;
        for &(start, len) in &plan.spans {
            prop_assert!(len >= 1);
            prop_assert!(start >= end, "spans overlap or are unordered");
            end = start + len;
        }
        prop_assert!(end <= doc_len);
        prop_assert!(drawn.raw.iter().all(|&l| l >= 1));
        if (doc_len as f64) >= 1.0 / eta {
            prop_assert!(plan.covered() as f64 >= (eta * doc_len as f64).min(doc_len as f64) - 1e-9);
        }
    }

    #[test]
    fn interleaving_keeps_uncovered_text_and_expands_spans(
        doc in prop::collection::vec(0usize..8, 1..80),
        factor in 1u32..5,
        seed in any::<u64>(),
    ) {
        let (vocab, synth) = toy_synth(factor);
        let layout = vocab.layout();
        let ids: Vec<u32> = doc.iter().map(|&w| layout.text_offset() + w as u32).collect();
        let cfg = InterleaveConfig { eta: 0.4, lambda: 3.0, seed };
        let (plan, _) = plan_spans(ids.len(), &cfg, &mut seeded(seed)).unwrap();
        let out = build_interleaved(&ids, &plan, &synth, seed).unwrap();

        let mut covered = vec![false; ids.len()];
        for &(s, l) in &plan.spans {
            covered[s..s + l].iter_mut().for_each(|c| *c = true);
        }
        let kept: Vec<u32> = ids.iter().zip(&covered).filter(|(_, &c)| !c).map(|(&i, _)| i).collect();
        let text_out: Vec<u32> = out.ids.iter().copied().filter(|&i| layout.is_text(i)).collect();
        prop_assert_eq!(kept, text_out);

        let boa = out.ids.iter().filter(|&&i| i == special::BEGIN_OF_AUDIO).count();
        let eoa = out.ids.iter().filter(|&&i| i == special::END_OF_AUDIO).count();
        prop_assert_eq!(boa, plan.spans.len());
        prop_assert_eq!(eoa, plan.spans.len());

        let expected_speech: usize = ids
            .iter()
            .zip(&covered)
            .filter(|(_, &c)| c)
            .map(|(&i, _)| synth.units(i).len() * factor as usize)
            .sum();
        let (speech, _) = count_speech(&out.ids, &layout);
        prop_assert_eq!(speech as usize, expected_speech);
    }

    #[test]
    fn oracle_synthesis_is_per_word(words in prop::collection::vec(0u32..8, 1..10), seed in any::<u64>()) {
        let (vocab, synth) = toy_synth(2);
        let ids: Vec<u32> = words.iter().map(|w| vocab.layout().text_offset() + w).collect();
        let whole = synth.synthesize(&ids, &mut seeded(seed)).unwrap();
        let parts: Vec<u32> = ids.iter().flat_map(|&i| synth.synthesize(&[i], &mut seeded(seed)).unwrap()).collect();
        prop_assert_eq!(whole, parts);
    }

    #[test]
    fn packing_preserves_the_stream(docs in docs_strategy(), seq_len in 2usize..40) {
        let rows = pack_sequences(&docs, seq_len, true).unwrap();
        prop_assert!(rows.iter().all(|r| r.len() == seq_len));
        let stream: Vec<u32> = rows.iter().flat_map(|r| r.ids.clone()).filter(|&i| i != special::PAD).collect();
        let expected: Vec<u32> = docs.iter().flat_map(|d| d.ids.iter().copied().chain([special::SEP])).collect();
        prop_assert_eq!(stream, expected);
        for r in &rows {
            for (&id, &m) in r.ids.iter().zip(&r.mask_or_all()) {
                prop_assert!(id != special::PAD || !m, "padding in the loss");
            }
        }
    }

    #[test]
    fn whole_packing_never_splits_documents(docs in docs_strategy(), extra in 0usize..10) {
        let seq_len = 30 + extra;
        let rows = pack_whole(&docs, seq_len).unwrap();
        let mut found = Vec::new();
        for r in &rows {
            prop_assert_eq!(r.len(), seq_len);
            let content: Vec<u32> = r.ids.iter().copied().filter(|&i| i != special::PAD).collect();
            for piece in content.split(|&i| i == special::SEP).filter(|p| !p.is_empty()) {
                found.push(piece.to_vec());
            }
        }
        let expected: Vec<Vec<u32>> = docs.iter().map(|d| d.ids.clone()).collect();
        prop_assert_eq!(found, expected);
    }

    #[test]
    fn one_epoch_sources_are_read_exactly_once(
        text_rows in 1usize..20,
        speech_rows in 0usize..30,
        asr_rows in 0usize..30,
        batch in 1usize..9,
        seed in any::<u64>(),
    ) {
        let mk = |n: usize, base: u32| -> Vec<TokenSequence> {
            (0..n).map(|i| TokenSequence::new(vec![base + i as u32; 4])).collect()
        };
        let sources = vec![
            Source { name: "text".into(), kind: SourceKind::Text, rows: mk(text_rows, 100) },
            Source { name: "speech".into(), kind: SourceKind::Speech, rows: mk(speech_rows, 200) },
            Source { name: "asr".into(), kind: SourceKind::SupervisedAsr, rows: mk(asr_rows, 300) },
            Source { name: "inter".into(), kind: SourceKind::Interleaved, rows: mk(5, 400) },
        ];
        let one_epoch = speech_rows + asr_rows;
        let budget = (one_epoch * 2 + 10).next_multiple_of(batch);
        let spec = MixtureSpec {
            seq_len: 4,
            batch_size: batch,
            budget_sequences: budget,
            text_ratio: 0.3,
            seed,
            sources: sources.iter().map(|s| SourceSpec { name: s.name.clone(), kind: s.kind, path: None }).collect(),
        };
        let schedule = compose_mixture(&spec, &sources).unwrap();
        prop_assert_eq!(schedule.rows().count(), budget);
        for src in [1, 2] {
            let mut seen: Vec<usize> = schedule.rows().filter(|r| r.source == src).map(|r| r.row).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..sources[src].rows.len()).collect::<Vec<_>>());
        }
        let text = schedule.rows().filter(|r| r.source == 0).count() as f64;
        prop_assert!((text - 0.3 * budget as f64).abs() <= 1.0);
    }

    #[test]
    fn quantize_matches_exhaustive_search(
        k in 2usize..12,
        dim in 1usize..6,
        n in 1usize..40,
        seed in any::<u64>(),
    ) {
        use rand::Rng as _;
        let mut rng = seeded(seed);
        let mut rows = |m: usize| -> Vec<Vec<f64>> {
            (0..m).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
        };
        let codebook = rows(k);
        let batch = rows(n);
        let cfg = VqConfig { codebook_size: k, dim, ..Default::default() };
        let state = VqState::from_codebook(&cfg, Matrix::from_rows(&codebook).unwrap()).unwrap();
        let (idx, _) = state.quantize(&Matrix::from_rows(&batch).unwrap()).unwrap();
        for (x, &i) in batch.iter().zip(&idx) {
            let d = |c: &Vec<f64>| x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = codebook.iter().map(d).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(d(&codebook[i]), best);
            prop_assert!(codebook[..i].iter().all(|c| d(c) > best), "tie not broken to the lowest index");
        }
    }

    #[test]
    fn shards_round_trip(
        docs in (0usize..20).prop_flat_map(|len| prop::collection::vec(prop::collection::vec(0u32..50, len), 0..10)),
    ) {
        let vocab = Vocab::from_words((0..30).map(|i| format!("w{i}")).collect()).unwrap().extend_with_speech(11);
        let seqs: Vec<TokenSequence> = docs
            .into_iter()
            .enumerate()
            .map(|(i, ids)| {
                if i % 2 == 0 {
                    TokenSequence::new(ids)
                } else {
                    let mask = ids.iter().map(|&x| x % 3 == 0).collect();
                    TokenSequence::with_mask(ids, mask)
                }
            })
            .collect();
        let bytes = encode_shard(&seqs, vocab.layout()).unwrap();
        let shard = decode_shard(&bytes, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(shard.sequences.len(), seqs.len());
        for (a, b) in shard.sequences.iter().zip(&seqs) {
            prop_assert_eq!(&a.ids, &b.ids);
            prop_assert_eq!(a.mask_or_all(), b.mask_or_all());
        }
        prop_assert_eq!(encode_shard(&shard.sequences, shard.header.layout).unwrap(), bytes);
    }

    #[test]
    fn edit_distance_is_a_metric(
        a in prop::collection::vec(0u32..4, 0..12),
        b in prop::collection::vec(0u32..4, 0..12),
        c in prop::collection::vec(0u32..4, 0..12),
    ) {
        prop_assert_eq!(edit_distance(&a, &a), 0);
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        prop_assert!(edit_distance(&a, &b) <= a.len().max(b.len()));
    }

    #[test]
    fn dialogues_round_trip(
        system in prop::collection::vec(20u32..40, 0..6),
        instruction in prop::collection::vec(50u32..60, 1..8),
        text in prop::collection::vec(20u32..40, 1..6),
        speech in prop::collection::vec(50u32..60, 1..8),
        guided in any::<bool>(),
    ) {
        let mode = if guided { DialogueMode::TextGuided } else { DialogueMode::Direct };
        let text_response = guided.then_some(text.as_slice());
        let seq = format_dialogue(&system, &instruction, mode, text_response, Some(&speech)).unwrap();
        let (m, parts) = parse_dialogue(&seq.ids).unwrap();
        prop_assert_eq!(m, mode);
        prop_assert_eq!(parts.system, system);
        prop_assert_eq!(parts.instruction, instruction);
        prop_assert_eq!(parts.text_response, guided.then_some(text));
        prop_assert_eq!(parts.speech_response, Some(speech));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), tied in any::<bool>()) {
        let cfg = LmConfig {
            vocab_size: 17,
            n_layers: 1,
            dim: 8,
            n_heads: 2,
            head_dim: 4,
            ffn_dim: 12,
            max_seq_len: 8,
            tied_embeddings: tied,
            seed,
            ..Default::default()
        };
        let p = Params::<f64>::init(&cfg).unwrap();
        let bytes = encode_checkpoint(&p).unwrap();
        let q = decode_checkpoint::<f64>(&bytes).unwrap();
        prop_assert_eq!(&p, &q);
        prop_assert_eq!(encode_checkpoint(&q).unwrap(), bytes);
    }
}
