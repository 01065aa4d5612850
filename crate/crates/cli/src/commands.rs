use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use forge_core::corpus::{
    build_text_vocab, encode_text, load_jsonl, read_shard, special, write_shard, TextDoc, TokenSequence, Vocab,
    VocabLayout,
};
use forge_core::eval::{
    continuation_accuracy, gen_toy_world, qa_accuracy, read_items_jsonl, run_ablation, write_items_jsonl,
    AblationAxis, EvalItem, Setting,
};
use forge_core::interleave::{count_speech, interleave_corpus, InterleaveConfig};
use forge_core::mixer::{
    compose_mixture, pack_sequences, pack_whole, schedule_rows, MixtureSpec, Schedule, Source, SourceKind,
};
use forge_core::quantizer::{run_vq_demo, save_vq_state, VqConfig};
use forge_core::rng::{derive_rng, fnv1a};
use forge_core::text2token::{
    pad_to_common_length, token_error_rate, train_t2t, LearnedSynth, OracleSynth, ParallelPair, TextToToken,
    UnitLexicon,
};
use forge_core::tinylm::{
    decode_checkpoint, load_checkpoint, save_checkpoint, train, LmConfig, Params, Precision, TrainConfig,
};
use forge_core::{ForgeError, Result, Scalar};
use serde_json::json;

use crate::config::{RunConfig, Stage};
use crate::manifest::{list_files, Recorder};
use crate::{Cli, Command, Failure, PrecisionArg, SynthMode};

type CmdResult = std::result::Result<(), Failure>;

pub fn dispatch(cli: &Cli) -> CmdResult {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed_flag = cli.global.seed;
    match &cli.command {
        Command::Vocab {
            input,
            max_size,
            min_freq,
            out,
            lexicon_out,
            unit_cap,
            chunk,
        } => vocab(&mut cfg, input, *max_size, *min_freq, out, lexicon_out.as_deref(), *unit_cap, *chunk),
        Command::Synth {
            mode,
            lexicon,
            vocab,
            input,
            text,
            expansion,
            jitter,
            ckpt,
            fit_steps,
            out,
        } => {
            cfg.resolve_seed(seed_flag)?;
            if let Some(d) = expansion {
                cfg.expansion.factor = *d;
            }
            if let Some(j) = jitter {
                cfg.expansion.jitter = *j;
            }
            cfg.validate()?;
            let args = SynthArgs {
                mode: *mode,
                lexicon,
                vocab,
                input: input.as_deref(),
                text: text.as_deref(),
                ckpt: ckpt.as_deref(),
                fit_steps: *fit_steps,
                out: out.as_deref(),
            };
            synth(&cfg, &args)
        }
        Command::Interleave {
            input,
            vocab,
            lexicon,
            eta,
            lambda,
            expansion,
            shard_rows,
            out,
        } => {
            cfg.resolve_seed(seed_flag)?;
            if let Some(e) = eta {
                cfg.interleave.eta = *e;
            }
            if let Some(l) = lambda {
                cfg.interleave.lambda = *l;
            }
            if let Some(d) = expansion {
                cfg.expansion.factor = *d;
            }
            cfg.validate()?;
            interleave(&cfg, input, vocab.as_deref(), lexicon.as_deref(), *shard_rows, out)
        }
        Command::Mix { spec, vocab, out } => {
            cfg.resolve_seed(seed_flag)?;
            if let Some(p) = spec {
                cfg.mixture = load_toml(p)?;
            }
            cfg.validate()?;
            mix(&cfg, vocab.as_deref(), out)
        }
        Command::Train {
            data,
            spec,
            vocab,
            lm,
            steps,
            precision,
            out,
        } => {
            cfg.resolve_seed(seed_flag)?;
            if let Some(p) = spec {
                cfg.mixture = load_toml(p)?;
            }
            if let Some(p) = lm {
                cfg.lm = load_toml(p)?;
            }
            if let Some(s) = steps {
                cfg.train.steps = *s;
            }
            match precision {
                Some(PrecisionArg::F32) => cfg.lm.precision = Precision::F32,
                Some(PrecisionArg::F64) => cfg.lm.precision = Precision::F64,
                None => {}
            }
            cfg.validate()?;
            train_cmd(&cfg, data.as_deref(), spec.is_some(), vocab.as_deref(), out)
        }
        Command::Eval {
            ckpt,
            items,
            settings,
            raw,
            max_gen,
            out,
        } => eval(&cfg, ckpt, items, settings, !*raw, *max_gen, out.as_deref()),
        Command::Stats { paths } => stats(paths),
        Command::VqDemo {
            codes,
            dim,
            steps,
            batch,
            out,
        } => {
            // the demo is self-contained; without a seed it uses 0
            cfg.seed = seed_flag.or(cfg.seed).or(Some(0));
            if let Some(k) = codes {
                cfg.vq.codebook_size = *k;
            }
            if let Some(d) = dim {
                cfg.vq.dim = *d;
            }
            cfg.validate()?;
            vq_demo(&cfg, *steps, *batch, out.as_deref())
        }
        Command::Ablate { axis, grid, seeds, out } => {
            // explicit --seeds make the global seed optional
            let seeds = if seeds.is_empty() {
                vec![cfg.resolve_seed(seed_flag)?]
            } else {
                cfg.seed = seed_flag.or(cfg.seed);
                seeds.clone()
            };
            cfg.validate()?;
            ablate(&cfg, axis, grid, &seeds, out)
        }
        Command::ShowConfig => {
            cfg.seed = seed_flag.or(cfg.seed);
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
        Command::World { out } => {
            cfg.resolve_seed(seed_flag)?;
            cfg.validate()?;
            world(&cfg, out)
        }
    }
}

fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
    toml::from_str(&text).map_err(|e| ForgeError::config(path.display().to_string(), e.message().to_string()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| ForgeError::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| ForgeError::io(path, e))
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| ForgeError::io(path, e))
}

/// `dir/manifest.json` for directory outputs, `<stem>.manifest.json` next to
/// file outputs.
fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.json")
    } else {
        let stem = out.file_stem().map_or("out".into(), |s| s.to_string_lossy().into_owned());
        out.with_file_name(format!("{stem}.manifest.json"))
    }
}

#[allow(clippy::too_many_arguments)]
fn vocab(
    cfg: &mut RunConfig,
    input: &Path,
    max_size: usize,
    min_freq: usize,
    out: &Path,
    lexicon_out: Option<&Path>,
    unit_cap: u32,
    chunk: usize,
) -> CmdResult {
    cfg.validate()?;
    let (docs, jstats) = load_jsonl(input)?;
    let mut vocab = build_text_vocab(docs.iter(), max_size, min_freq)?;
    let mut rec = Recorder::new(
        "vocab",
        json!({"max_size": max_size, "min_freq": min_freq, "unit_cap": unit_cap, "chunk": chunk}),
    );
    rec.input(input);
    if let Some(lp) = lexicon_out {
        let lex = UnitLexicon::build(vocab.words().iter().map(String::as_str), unit_cap, chunk, cfg.expansion)?;
        lex.save(lp)?;
        vocab = vocab.extend_with_speech(unit_cap);
        rec.output(lp);
    }
    vocab.save(out)?;
    rec.output(out);
    rec.write(cfg, &manifest_path(out))?;
    log::info!(
        "vocab: {} docs ({} skipped), {} ids",
        docs.len(),
        jstats.skipped,
        vocab.layout().size()
    );
    Ok(())
}

struct SynthArgs<'a> {
    mode: SynthMode,
    lexicon: &'a Path,
    vocab: &'a Path,
    input: Option<&'a Path>,
    text: Option<&'a str>,
    ckpt: Option<&'a Path>,
    fit_steps: Option<usize>,
    out: Option<&'a Path>,
}

fn synth(cfg: &RunConfig, a: &SynthArgs) -> CmdResult {
    let vocab = Vocab::load(a.vocab)?;
    let lex = UnitLexicon::load(a.lexicon)?;
    let layout = vocab.layout();
    let oracle = OracleSynth::new(&lex, &vocab, cfg.expansion)?;
    let seed = cfg.stage_seed(Stage::Synth);
    let docs: Vec<TextDoc> = match (a.input, a.text) {
        (Some(p), _) => load_jsonl(p)?.0,
        (None, Some(t)) => vec![TextDoc::new("text", t)],
        (None, None) => return Err(ForgeError::config("input", "pass --input or --text").into()),
    };
    let encoded: Vec<(String, Vec<u32>)> = docs.iter().map(|d| (d.id.clone(), encode_text(d, &vocab).ids)).collect();
    let mut rec = Recorder::new("synth", json!({"mode": format!("{:?}", a.mode).to_lowercase()}));
    rec.input(a.vocab);
    rec.input(a.lexicon);
    if let Some(p) = a.input {
        rec.input(p);
    }
    let learned = match a.mode {
        SynthMode::Oracle => None,
        SynthMode::Learned => {
            let ckpt = a
                .ckpt
                .ok_or_else(|| ForgeError::config("ckpt", "learned mode needs --ckpt"))?;
            let params = match a.fit_steps {
                Some(steps) => {
                    let params = fit_t2t(cfg, &oracle, &layout, &encoded, steps, seed)?;
                    save_checkpoint(&params, ckpt)?;
                    rec.output(ckpt);
                    params
                }
                None => {
                    rec.input(ckpt);
                    load_checkpoint::<f32>(ckpt)?
                }
            };
            Some(LearnedSynth {
                params,
                layout,
                max_tokens: 256,
            })
        }
    };
    let mut lines = Vec::with_capacity(encoded.len());
    let mut ter_sum = 0.0;
    for (id, ids) in &encoded {
        let key = fnv1a(id.as_bytes());
        let reference = oracle.synthesize(ids, &mut derive_rng(seed, &[key]))?;
        let speech = match &learned {
            Some(l) => {
                let s = l.synthesize(ids, &mut derive_rng(seed, &[key]))?;
                ter_sum += token_error_rate(&reference, &s)?;
                s
            }
            None => reference,
        };
        lines.push(json!({"id": id, "speech": speech}));
    }
    if learned.is_some() && !encoded.is_empty() {
        log::info!("learned synth: mean TER vs oracle {:.4}", ter_sum / encoded.len() as f64);
    }
    match a.out {
        Some(p) => {
            write_jsonl(p, &lines)?;
            rec.output(p);
            rec.write(cfg, &manifest_path(p))?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            for l in &lines {
                let _ = writeln!(stdout, "{l}");
            }
        }
    }
    Ok(())
}

/// Trains the learned converter on oracle renderings of word windows from
/// the input documents.
fn fit_t2t(
    cfg: &RunConfig,
    oracle: &OracleSynth,
    layout: &VocabLayout,
    docs: &[(String, Vec<u32>)],
    steps: usize,
    seed: u64,
) -> Result<Params<f32>> {
    let mut pairs = Vec::new();
    for (d, (_, ids)) in docs.iter().enumerate() {
        for (w, window) in ids.chunks(4).enumerate() {
            let speech = oracle.synthesize(window, &mut derive_rng(seed, &[0x7a, d as u64, w as u64]))?;
            pairs.push(ParallelPair {
                text: window.to_vec(),
                speech,
            });
        }
    }
    let longest = pairs.iter().map(|p| p.text.len() + p.speech.len() + 2).max().unwrap_or(2);
    let lm = LmConfig {
        vocab_size: layout.size() as usize,
        max_seq_len: cfg.lm.max_seq_len.max(longest),
        seed: cfg.stage_seed(Stage::Lm),
        ..cfg.lm.clone()
    };
    let tcfg = TrainConfig {
        steps,
        seed: cfg.stage_seed(Stage::Train),
        ..cfg.train.clone()
    };
    let outcome = train_t2t::<f32>(&pairs, layout, &lm, &tcfg, |s| {
        if s.step % 100 == 0 {
            log::info!("t2t step {} loss {:.4}", s.step, s.loss);
        }
    })?;
    if let Some(step) = outcome.diverged_at {
        return Err(ForgeError::Diverged {
            step,
            last_loss: outcome.final_loss().unwrap_or(f64::NAN),
        });
    }
    Ok(outcome.params)
}

fn pad_and_write(path: &Path, rows: &[TokenSequence], layout: VocabLayout) -> Result<()> {
    let mut rows = rows.to_vec();
    pad_to_common_length(&mut rows);
    write_shard(path, &rows, layout)?;
    Ok(())
}

fn interleave(
    cfg: &RunConfig,
    input: &Path,
    vocab_path: Option<&Path>,
    lexicon_path: Option<&Path>,
    shard_rows: usize,
    out: &Path,
) -> CmdResult {
    if shard_rows == 0 {
        return Err(ForgeError::config("shard_rows", "must be >= 1").into());
    }
    let (docs, _) = load_jsonl(input)?;
    let mut rec = Recorder::new(
        "interleave",
        json!({"eta": cfg.interleave.eta, "lambda": cfg.interleave.lambda, "expansion": cfg.expansion, "shard_rows": shard_rows}),
    );
    rec.input(input);
    let mut vocab = match vocab_path {
        Some(p) => {
            rec.input(p);
            Vocab::load(p)?
        }
        None => build_text_vocab(docs.iter(), 50_000, 1)?,
    };
    let lexicon = match lexicon_path {
        Some(p) => {
            rec.input(p);
            UnitLexicon::load(p)?
        }
        None => UnitLexicon::build(vocab.words().iter().map(String::as_str), 256, 2, cfg.expansion)?,
    };
    if vocab.layout().n_speech == 0 {
        vocab = vocab.extend_with_speech(lexicon.unit_cap);
    }
    let synth = OracleSynth::new(&lexicon, &vocab, cfg.expansion)?;
    let icfg = InterleaveConfig {
        seed: cfg.stage_seed(Stage::Interleave),
        ..cfg.interleave
    };
    let started = Instant::now();
    let corpus = interleave_corpus(&docs, &vocab, &synth, &icfg)?;
    let secs = started.elapsed().as_secs_f64();
    create_dir(out)?;
    let layout = vocab.layout();
    let seqs = corpus.sequences();
    for (i, chunk) in seqs.chunks(shard_rows).enumerate() {
        let p = out.join(format!("interleaved-{i:05}.shard"));
        pad_and_write(&p, chunk, layout)?;
        rec.output(&p);
    }
    let vp = out.join("vocab.json");
    vocab.save(&vp)?;
    let lp = out.join("lexicon.json");
    lexicon.save(&lp)?;
    let sp = out.join("stats.json");
    write_json(&sp, &corpus.stats)?;
    for p in [&vp, &lp, &sp] {
        rec.output(p);
    }
    rec.write(cfg, &out.join("manifest.json"))?;
    log::info!(
        "interleave: {} docs, speech ratio {:.4}, {:.0} output tokens/s",
        corpus.stats.docs,
        corpus.stats.speech_ratio,
        corpus.stats.output_tokens as f64 / secs.max(1e-9)
    );
    println!("{}", serde_json::to_string(&corpus.stats)?);
    Ok(())
}

/// Shard rows with trailing padding removed.
fn read_docs_from_shards(path: &Path) -> Result<(Vec<TokenSequence>, Option<VocabLayout>)> {
    let mut out = Vec::new();
    let mut layout = None;
    for f in list_files(path)?.into_iter().filter(|p| p.extension().is_some_and(|e| e == "shard")) {
        let shard = read_shard(&f)?;
        layout = Some(shard.header.layout);
        for s in shard.sequences {
            let end = s.ids.iter().rposition(|&id| id != special::PAD).map_or(0, |i| i + 1);
            let ids = s.ids[..end].to_vec();
            out.push(match s.loss_mask {
                Some(m) => TokenSequence::with_mask(ids, m[..end].to_vec()),
                None => TokenSequence::new(ids),
            });
        }
    }
    Ok((out, layout))
}

/// Loads and packs every source of `spec`, then composes the schedule.
fn build_mixture(spec: &MixtureSpec, vocab: Option<&Vocab>) -> Result<(Vec<Source>, Schedule, VocabLayout)> {
    let mut sources = Vec::new();
    let mut layout = vocab.map(Vocab::layout);
    for (i, s) in spec.sources.iter().enumerate() {
        let field = format!("mixture.sources[{i}].path");
        let path = PathBuf::from(s.path.as_deref().ok_or_else(|| ForgeError::config(&field, "required"))?);
        let docs = if path.extension().is_some_and(|e| e == "jsonl") {
            let v = vocab.ok_or_else(|| ForgeError::config("vocab", "JSONL sources need --vocab"))?;
            load_jsonl(&path)?.0.iter().map(|d| encode_text(d, v)).collect()
        } else {
            let (docs, l) = read_docs_from_shards(&path)?;
            if let (Some(a), Some(b)) = (layout, l) {
                if a != b {
                    return Err(ForgeError::config(field, "shard vocab layout differs from the other sources"));
                }
            }
            layout = layout.or(l);
            docs
        };
        let rows = match s.kind {
            SourceKind::SupervisedAsr | SourceKind::SupervisedTts => pack_whole(&docs, spec.seq_len)?,
            _ => pack_sequences(&docs, spec.seq_len, true)?,
        };
        sources.push(Source {
            name: s.name.clone(),
            kind: s.kind,
            rows,
        });
    }
    let layout = layout.ok_or_else(|| ForgeError::config("mixture.sources", "no source carries a vocab layout"))?;
    let schedule = compose_mixture(spec, &sources)?;
    Ok((sources, schedule, layout))
}

fn mix(cfg: &RunConfig, vocab_path: Option<&Path>, out: &Path) -> CmdResult {
    let spec = MixtureSpec {
        seed: cfg.stage_seed(Stage::Mixture),
        ..cfg.mixture.clone()
    };
    let vocab = vocab_path.map(Vocab::load).transpose()?;
    let (sources, schedule, layout) = build_mixture(&spec, vocab.as_ref())?;
    create_dir(out)?;
    let mut rec = Recorder::new("mix", json!({}));
    if let Some(p) = vocab_path {
        rec.input(p);
    }
    for s in &spec.sources {
        if let Some(p) = &s.path {
            rec.input(Path::new(p));
        }
    }
    let rows = schedule_rows(&schedule, &sources);
    for (i, chunk) in rows.chunks(4096).enumerate() {
        let p = out.join(format!("mix-{i:05}.shard"));
        write_shard(&p, chunk, layout)?;
        rec.output(&p);
    }
    let rp = out.join("report.json");
    write_json(&rp, &schedule.report)?;
    rec.output(&rp);
    rec.write(cfg, &out.join("manifest.json"))?;
    println!("{}", serde_json::to_string(&schedule.report)?);
    Ok(())
}

fn train_cmd(cfg: &RunConfig, data: Option<&Path>, has_spec: bool, vocab_path: Option<&Path>, out: &Path) -> CmdResult {
    let mut rec = Recorder::new("train", json!({}));
    let (rows, layout) = match (data, has_spec) {
        (Some(d), _) => {
            rec.input(d);
            let mut rows = Vec::new();
            let mut layout = None;
            for f in list_files(d)?
                .into_iter()
                .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("mix-")))
            {
                let shard = read_shard(&f)?;
                layout = Some(shard.header.layout);
                rows.extend(shard.sequences);
            }
            let layout = layout.ok_or_else(|| ForgeError::config("data", "no mix-*.shard files found"))?;
            (rows, layout)
        }
        (None, true) => {
            let spec = MixtureSpec {
                seed: cfg.stage_seed(Stage::Mixture),
                ..cfg.mixture.clone()
            };
            let vocab = vocab_path.map(Vocab::load).transpose()?;
            let (sources, schedule, layout) = build_mixture(&spec, vocab.as_ref())?;
            (schedule_rows(&schedule, &sources), layout)
        }
        (None, false) => return Err(ForgeError::config("data", "pass --data or --spec").into()),
    };
    let seq_len = rows.first().map_or(0, |r| r.len());
    let lm = LmConfig {
        vocab_size: layout.size() as usize,
        max_seq_len: cfg.lm.max_seq_len.max(seq_len),
        seed: cfg.stage_seed(Stage::Lm),
        ..cfg.lm.clone()
    };
    lm.validate()?;
    // the mixture order is the training order
    let tcfg = TrainConfig {
        shuffle: false,
        seed: cfg.stage_seed(Stage::Train),
        ..cfg.train.clone()
    };
    create_dir(out)?;
    match lm.precision {
        Precision::F32 => run_training::<f32>(cfg, &lm, &tcfg, &rows, out, rec),
        Precision::F64 => run_training::<f64>(cfg, &lm, &tcfg, &rows, out, rec),
    }
}

fn run_training<T: Scalar>(
    cfg: &RunConfig,
    lm: &LmConfig,
    tcfg: &TrainConfig,
    rows: &[TokenSequence],
    out: &Path,
    mut rec: Recorder,
) -> CmdResult {
    let metrics_path = out.join("metrics.jsonl");
    let mut metrics = Vec::new();
    let started = Instant::now();
    let outcome = train(Params::<T>::init(lm)?, rows, tcfg, |s| {
        let tps = s.tokens as f64 / started.elapsed().as_secs_f64().max(1e-9);
        metrics.push(json!({"step": s.step, "loss": s.loss, "lr": s.lr, "grad_norm": s.grad_norm, "tokens": s.tokens, "tokens_per_s": tps}));
        if s.step % 50 == 0 {
            log::info!("step {} loss {:.4} lr {:.2e}", s.step, s.loss, s.lr);
        }
    })?;
    write_jsonl(&metrics_path, &metrics)?;
    let ckpt = out.join("model.ckpt");
    save_checkpoint(&outcome.params, &ckpt)?;
    let summary = json!({
        "steps": outcome.losses.len(),
        "final_loss": outcome.final_loss(),
        "diverged_at": outcome.diverged_at,
        "tokens_seen": outcome.tokens_seen,
        "params": outcome.params.num_params(),
    });
    let sp = out.join("train.json");
    write_json(&sp, &summary)?;
    for p in [&ckpt, &sp] {
        rec.output(p);
    }
    rec.write(cfg, &out.join("manifest.json"))?;
    if let Some(step) = outcome.diverged_at {
        return Err(Failure::Runtime(format!(
            "training diverged at step {step}; last finite parameters saved to {}",
            ckpt.display()
        )));
    }
    println!("{summary}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    cfg: &RunConfig,
    ckpt: &Path,
    items_path: &Path,
    settings: &[String],
    normalize: bool,
    max_gen: usize,
    out: Option<&Path>,
) -> CmdResult {
    let wanted: Vec<Setting> = settings.iter().map(|s| Setting::parse(s)).collect::<Result<_>>()?;
    let bytes = fs::read(ckpt).map_err(|e| ForgeError::io(ckpt, e))?;
    let params = decode_checkpoint::<f64>(&bytes)?;
    let items = read_items_jsonl(items_path)?;
    let mut cont = Vec::new();
    let mut qa = Vec::new();
    for it in items {
        match it {
            EvalItem::Continuation(c) if wanted.contains(&c.setting) => cont.push(c),
            EvalItem::Qa(q) if wanted.contains(&q.setting) => qa.push(q),
            _ => {}
        }
    }
    let vocab_size = params.config.vocab_size as u32;
    for c in &cont {
        if c.context.iter().chain(c.candidates.iter().flatten()).any(|&id| id >= vocab_size) {
            return Err(ForgeError::config("items", format!("item ids exceed the model vocab of {vocab_size}")).into());
        }
    }
    let continuation = if cont.is_empty() {
        Default::default()
    } else {
        continuation_accuracy(&params, &cont, normalize)?
    };
    let qa_report = if qa.is_empty() {
        Default::default()
    } else {
        let layout = items_layout(items_path)?;
        qa_accuracy(&params, &qa, &layout, max_gen)?
    };
    let report = json!({
        "normalize": normalize,
        "continuation": continuation,
        "qa": qa_report,
    });
    match out {
        Some(p) => {
            write_json(p, &report)?;
            let mut rec = Recorder::new("eval", json!({"settings": settings, "normalize": normalize, "max_gen": max_gen}));
            rec.input(ckpt);
            rec.input(items_path);
            rec.output(p);
            rec.write(cfg, &manifest_path(p))?;
        }
        None => println!("{report}"),
    }
    Ok(())
}

/// QA judging needs the speech id range: read it from `vocab.json` next to
/// the items file.
fn items_layout(items_path: &Path) -> Result<VocabLayout> {
    let vp = items_path.with_file_name("vocab.json");
    if !vp.exists() {
        return Err(ForgeError::config(
            "items",
            format!("QA items need {} to tell speech ids apart", vp.display()),
        ));
    }
    Ok(Vocab::load(&vp)?.layout())
}

fn stats(paths: &[PathBuf]) -> CmdResult {
    let mut files = Vec::new();
    let mut sidecars = Vec::new();
    for p in paths {
        files.extend(
            list_files(p)?
                .into_iter()
                .filter(|f| f.extension().is_some_and(|e| e == "shard")),
        );
        let side = p.join("stats.json");
        if p.is_dir() && side.exists() {
            sidecars.push(side);
        }
    }
    if files.is_empty() {
        return Err(ForgeError::config("paths", "no .shard files found").into());
    }
    let (mut rows, mut positions, mut tokens, mut speech, mut content) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for f in &files {
        let shard = read_shard(f)?;
        let layout = shard.header.layout;
        for s in &shard.sequences {
            rows += 1;
            positions += s.len() as u64;
            tokens += s.ids.iter().filter(|&&id| id != special::PAD).count() as u64;
            let (sp, c) = count_speech(&s.ids, &layout);
            speech += sp;
            content += c;
        }
    }
    let ratio = if content == 0 { 0.0 } else { speech as f64 / content as f64 };
    let mut report = json!({
        "files": files.len(),
        "sequences": rows,
        "positions": positions,
        "tokens": tokens,
        "speech_tokens": speech,
        "content_tokens": content,
        "speech_ratio": ratio,
    });
    if let [side] = sidecars.as_slice() {
        let text = fs::read_to_string(side).map_err(|e| ForgeError::io(side, e))?;
        let v: serde_json::Value = serde_json::from_str(&text)?;
        let side_ratio = v["speech_ratio"].as_f64().unwrap_or(f64::NAN);
        report["sidecar_speech_ratio"] = json!(side_ratio);
        report["matches_sidecar"] = json!(side_ratio == ratio);
    }
    println!("{report}");
    Ok(())
}

fn vq_demo(cfg: &RunConfig, steps: usize, batch: usize, out: Option<&Path>) -> CmdResult {
    let vcfg = VqConfig {
        seed: cfg.stage_seed(Stage::Vq),
        ..cfg.vq.clone()
    };
    let (state, report) = run_vq_demo::<f64>(&vcfg, steps, batch)?;
    if let Some(p) = out {
        save_vq_state(&state, p)?;
        let mut rec = Recorder::new("vq-demo", json!({"steps": steps, "batch": batch}));
        rec.output(p);
        rec.write(cfg, &manifest_path(p))?;
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn ablate(cfg: &RunConfig, axis: &str, grid: &[f64], seeds: &[u64], out: &Path) -> CmdResult {
    let axis = AblationAxis::parse(axis)?;
    let report = run_ablation(axis, grid, seeds, &cfg.experiment, |p| {
        let acc = p.report.as_ref().map(|r| r.cross_modal);
        log::info!("ablation point {} seed {}: ok={} cross_modal={:?}", p.value, p.seed, p.ok, acc);
    })?;
    write_json(out, &report)?;
    let csv = out.with_extension("csv");
    fs::write(&csv, report.plot_csv()).map_err(|e| ForgeError::io(&csv, e))?;
    let mut rec = Recorder::new("ablate", json!({"axis": axis, "grid": grid, "seeds": seeds}));
    rec.output(out);
    rec.output(&csv);
    rec.write(cfg, &manifest_path(out))?;
    println!("{}", report.plot_csv().trim_end());
    Ok(())
}

fn world(cfg: &RunConfig, out: &Path) -> CmdResult {
    let exp = cfg.experiment.with_seed(cfg.stage_seed(Stage::Experiment));
    let w = gen_toy_world(&exp.world)?;
    create_dir(out)?;
    let all: Vec<usize> = (0..w.facts.len()).collect();
    let text_docs = w.fact_docs(&all, exp.text_passes, exp.seed);
    let inter_docs = w.fact_docs(&w.train_facts, 1, exp.seed ^ 1);
    let mut items: Vec<EvalItem> = w.items.iter().cloned().map(EvalItem::Continuation).collect();
    items.extend(w.qa.iter().cloned().map(EvalItem::Qa));
    let files = [
        out.join("corpus.jsonl"),
        out.join("interleave-corpus.jsonl"),
        out.join("vocab.json"),
        out.join("lexicon.json"),
        out.join("items.jsonl"),
        out.join("facts.json"),
    ];
    write_jsonl(&files[0], &text_docs)?;
    write_jsonl(&files[1], &inter_docs)?;
    w.vocab.save(&files[2])?;
    w.lexicon.save(&files[3])?;
    write_items_jsonl(&files[4], &items)?;
    write_json(
        &files[5],
        &json!({"facts": w.facts, "eval_facts": w.eval_facts, "train_facts": w.train_facts}),
    )?;
    let mut rec = Recorder::new("world", json!({}));
    for f in &files {
        rec.output(f);
    }
    rec.write(cfg, &out.join("manifest.json"))?;
    log::info!(
        "world: {} facts ({} held out), {} items",
        w.facts.len(),
        w.eval_facts.len(),
        items.len()
    );
    Ok(())
}
