//! Toy-world evaluation: continuation selection, spoken QA, dialogue
//! templates and ablation sweeps.

mod ablation;
mod dialogue;
mod experiment;
mod items;
mod score;
mod world;

pub use ablation::{run_ablation, AblationAxis, AblationPoint, AblationReport, AblationSummary};
pub use dialogue::{format_dialogue, parse_dialogue, DialogueMode, DialogueParts};
pub use experiment::{
    accuracy_row, build_sources, cross_modal_mean, run_experiment, ExperimentConfig, ExperimentData, ExperimentReport,
};
pub use items::{read_items_jsonl, write_items_jsonl, ContinuationItem, EvalItem, QaItem, Setting};
pub use score::{
    candidate_scores, contains_run, continuation_accuracy, qa_accuracy, qa_correct, select_candidate, wilson_interval,
    AccuracyReport, SettingAccuracy,
};
pub use world::{gen_toy_world, Fact, ToyWorld, WorldConfig, CUE_WORD};
