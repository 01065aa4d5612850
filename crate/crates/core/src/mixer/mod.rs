//! Pre-training mixture: packing, supervised layouts, and the per-batch
//! source schedule.

mod pack;
mod schedule;

pub use pack::{pack_sequences, pack_whole, supervised_pair_format, Direction};
pub use schedule::{
    compose_mixture, compose_repeated, materialize, minimal_budget, schedule_rows, MixReport, MixtureSpec, PackedBatch, RowRef, Schedule,
    Source, SourceKind, SourceSpec,
};
