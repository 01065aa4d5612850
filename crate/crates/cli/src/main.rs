//! `forge`: command-line driver for the interleaved speech-text pipeline.

mod commands;
mod config;
mod logging;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use forge_core::ForgeError;

#[derive(Debug, Parser)]
#[command(name = "forge", version = manifest::VERSION, about = "Interleaved speech-text data pipeline and toy training harness")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Run configuration (TOML). Missing sections take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides FORGE_SEED and the config file.
    #[arg(long, global = true, env = "FORGE_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Log level for the JSON log stream on stderr.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: log::LevelFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthMode {
    Oracle,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a text vocabulary (and optionally a unit lexicon) from a JSONL corpus.
    Vocab {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 50_000)]
        max_size: usize,
        #[arg(long, default_value_t = 1)]
        min_freq: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also build a unit lexicon and extend the vocab with its speech ids.
        #[arg(long)]
        lexicon_out: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        unit_cap: u32,
        #[arg(long, default_value_t = 2)]
        chunk: usize,
    },
    /// Convert text to speech tokens with the oracle or a learned model.
    #[command(alias = "t2t")]
    Synth {
        #[arg(long, value_enum, default_value_t = SynthMode::Oracle)]
        mode: SynthMode,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// JSONL corpus to convert.
        #[arg(long, conflicts_with = "text")]
        input: Option<PathBuf>,
        /// A single text to convert.
        #[arg(long)]
        text: Option<String>,
        #[arg(long)]
        expansion: Option<u32>,
        #[arg(long)]
        jitter: Option<f64>,
        /// Checkpoint of the learned model.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Fit the learned model on oracle pairs for this many steps and save
        /// it to --ckpt before converting.
        #[arg(long)]
        fit_steps: Option<usize>,
        /// Output JSONL; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build interleaved shards from a JSONL corpus.
    Interleave {
        #[arg(long)]
        input: PathBuf,
        /// Combined vocab; built from the corpus when absent.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Unit lexicon; built from the vocab words when absent.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        expansion: Option<u32>,
        #[arg(long, default_value_t = 4096)]
        shard_rows: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compose a mixture schedule and write it as packed shards.
    Mix {
        /// Mixture spec (TOML); defaults to the config's [mixture] section.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Vocab used to encode JSONL text sources.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the tiny LM on a mixture.
    Train {
        /// Directory written by `forge mix`.
        #[arg(long, conflicts_with = "spec")]
        data: Option<PathBuf>,
        /// Mixture spec composed in memory.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// LM config (TOML); defaults to the config's [lm] section.
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_enum)]
        precision: Option<PrecisionArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on continuation and QA items.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        items: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "S,TS,ST")]
        settings: Vec<String>,
        /// Raw log-likelihood instead of per-token normalization.
        #[arg(long)]
        raw: bool,
        #[arg(long, default_value_t = 32)]
        max_gen: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Speech-ratio and size statistics of shard files.
    Stats {
        /// Shard files or directories.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Fit a VQ codebook to a synthetic Gaussian mixture.
    VqDemo {
        #[arg(long)]
        codes: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        /// Save the final state blob here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one axis of the toy-world experiment.
    Ablate {
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        /// Seeds per grid value; defaults to the global seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the resolved configuration (defaults plus --config) as TOML.
    ShowConfig,
    /// Generate the toy world: corpora, vocab, lexicon and eval items.
    World {
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit statuses: 0 success, 1 runtime failure, 2 usage, 3 invalid config.
pub enum Failure {
    Config { field: String, message: String },
    Runtime(String),
}

impl From<ForgeError> for Failure {
    fn from(e: ForgeError) -> Self {
        match e {
            ForgeError::Config { field, message } => Failure::Config { field, message },
            ForgeError::Infeasible {
                reason,
                required_sequences,
            } => Failure::Config {
                field: "mixture.budget_sequences".into(),
                message: format!("{reason}; required budget: {required_sequences} sequences"),
            },
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    logging::init(cli.global.log_level);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads.max(1))
        .build()
        .expect("thread pool");
    match pool.install(|| commands::dispatch(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config { field, message }) => {
            eprintln!("{}", serde_json::json!({"error": "config", "field": field, "message": message}));
            ExitCode::from(3)
        }
        Err(Failure::Runtime(message)) => {
            eprintln!("{}", serde_json::json!({"error": "runtime", "message": message}));
            ExitCode::from(1)
        }
    }
}
