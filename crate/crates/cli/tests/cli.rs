use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn forge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(args)
        .current_dir(dir)
        .env_remove("FORGE_SEED")
        .output()
        .expect("run forge")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().last().expect("stdout line");
    serde_json::from_str(line).expect("json stdout")
}

fn stderr_error(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.contains("\"error\"")).expect("error line");
    serde_json::from_str(line).expect("json error")
}

fn write_corpus(dir: &Path) {
    let words = ["the", "river", "stone", "moves", "slowly", "under", "green", "light", "and", "wind"];
    let mut text = String::new();
    for d in 0..60 {
        let n = 20 + d % 40;
        let doc: Vec<&str> = (0..n).map(|i| words[(d * 3 + i * 7) % words.len()]).collect();
        text += &serde_json::json!({"id": format!("doc{d}"), "text": doc.join(" ")}).to_string();
        text.push('\n');
    }
    text += "not json\n";
    fs::write(dir.join("corpus.jsonl"), text).unwrap();
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = forge(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("interleave"));
    assert_eq!(forge(dir.path(), &["stats", "--bogus"]).status.code(), Some(2));
    assert_eq!(forge(dir.path(), &["no-such-command"]).status.code(), Some(2));
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let out = forge(dir.path(), &["interleave", "--input", "corpus.jsonl", "--out", "out"]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_error(&out);
    assert_eq!(err["error"], "config");
    assert_eq!(err["field"], "seed");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    fs::write(dir.path().join("run.toml"), "seed = 1\n[interleave]\neta = 1.5\n").unwrap();
    let out = forge(
        dir.path(),
        &["--config", "run.toml", "interleave", "--input", "corpus.jsonl", "--out", "out"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_error(&out)["field"], "interleave.eta");

    let out = forge(dir.path(), &["interleave", "--seed", "1", "--eta=-0.2", "--input", "corpus.jsonl", "--out", "o"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_error(&out)["field"], "interleave.eta");

    fs::write(dir.path().join("typo.toml"), "[interleave]\netta = 0.3\n").unwrap();
    let out = forge(dir.path(), &["--config", "typo.toml", "show-config"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(["interleave", "--input", "corpus.jsonl", "--out", "out"])
        .current_dir(dir.path())
        .env("FORGE_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
}

#[test]
fn stats_match_the_sidecar_and_runs_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let args = |out: &'static str| {
        vec!["interleave", "--seed", "4", "--input", "corpus.jsonl", "--shard-rows", "16", "--out", out]
    };
    let a = forge(dir.path(), &args("a"));
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let b = forge(dir.path(), &["--threads", "3"].into_iter().chain(args("b")).collect::<Vec<_>>());
    assert_eq!(b.status.code(), Some(0));

    let names: Vec<_> = fs::read_dir(dir.path().join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(names.iter().filter(|n| n.to_string_lossy().ends_with(".shard")).count() >= 4);
    for n in &names {
        let x = fs::read(dir.path().join("a").join(n)).unwrap();
        let y = fs::read(dir.path().join("b").join(n)).unwrap();
        if n == "manifest.json" {
            // manifests name their output directory
            let x = String::from_utf8(x).unwrap().replace("\"a/", "\"b/");
            assert_eq!(x.as_bytes(), y.as_slice());
        } else {
            assert!(x == y, "{n:?} differs between runs");
        }
    }

    let stats = forge(dir.path(), &["stats", "a"]);
    assert_eq!(stats.status.code(), Some(0));
    let s = stdout_json(&stats);
    assert_eq!(s["matches_sidecar"], true);
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/stats.json")).unwrap()).unwrap();
    assert_eq!(s["speech_tokens"], sidecar["speech_tokens"]);
    assert_eq!(s["content_tokens"], sidecar["content_tokens"]);
    assert_eq!(s["tokens"], sidecar["output_tokens"]);
    let ratio = s["speech_ratio"].as_f64().unwrap();
    assert!(ratio > 0.1 && ratio < 0.9, "{ratio}");
}

#[test]
fn synth_and_vq_demo() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let out = forge(
        dir.path(),
        &["vocab", "--input", "corpus.jsonl", "--out", "vocab.json", "--lexicon-out", "lexicon.json"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let synth = |expansion: &str| {
        let out = forge(
            dir.path(),
            &[
                "synth", "--seed", "1", "--vocab", "vocab.json", "--lexicon", "lexicon.json", "--text",
                "river stone", "--expansion", expansion,
            ],
        );
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        stdout_json(&out)["speech"].as_array().unwrap().len()
    };
    assert_eq!(synth("4"), 2 * synth("2"));

    let out = forge(dir.path(), &["vq-demo", "--steps", "200", "--batch", "64", "--out", "vq.blob"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("vq.blob").exists());
    assert!(dir.path().join("vq.manifest.json").exists());
}

#[test]
fn infeasible_mixture_reports_the_budget() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    assert_eq!(
        forge(dir.path(), &["vocab", "--input", "corpus.jsonl", "--out", "vocab.json"]).status.code(),
        Some(0)
    );
    let spec = "seq_len = 16\nbatch_size = 4\nbudget_sequences = 4\ntext_ratio = 0.3\n\
        [[sources]]\nname = \"text\"\nkind = \"text\"\npath = \"corpus.jsonl\"\n\
        [[sources]]\nname = \"pairs\"\nkind = \"speech\"\npath = \"corpus.jsonl\"\n";
    fs::write(dir.path().join("mix.toml"), spec).unwrap();
    let out = forge(dir.path(), &["mix", "--seed", "1", "--spec", "mix.toml", "--vocab", "vocab.json", "--out", "m"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let err = stderr_error(&out);
    assert_eq!(err["field"], "mixture.budget_sequences");
    assert!(err["message"].as_str().unwrap().contains("required"));
}
