//! Text-to-speech-token conversion: a deterministic oracle for the toy
//! speech domain and a learned mode on top of the tiny LM.

mod learned;
mod lexicon;
mod synth;
mod ter;

pub use learned::{pad_to_common_length, train_t2t, LearnedSynth, ParallelPair};
pub use lexicon::{chunk_word, word_to_units, ExpansionConfig, UnitLexicon};
pub use synth::{synthesize_span, OracleSynth, TextToToken};
pub use ter::{edit_distance, token_error_rate};
