//! Span corruption: replace Poisson-length word spans with synthesized
//! speech wrapped in audio sentinels.

mod build;
mod plan;

pub use build::{
    build_interleaved, count_speech, interleave_corpus, interleave_doc, is_content, measure_speech_ratio, summarize,
    InterleaveStats, InterleavedCorpus, InterleavedDoc,
};
pub use plan::{draw_span_lengths, place_spans, plan_spans, DrawnLengths, InterleaveConfig, SpanPlan};
