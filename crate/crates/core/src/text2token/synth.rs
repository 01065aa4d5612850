use rand::Rng as _;

use super::lexicon::{ExpansionConfig, UnitLexicon};
use crate::corpus::{special, TokenId, TokenSequence, Vocab, VocabLayout};
use crate::error::{ForgeError, Result};
use crate::rng::Rng;

/// Anything that turns a run of text ids into speech ids.
pub trait TextToToken {
    fn synthesize(&self, text_ids: &[TokenId], rng: &mut Rng) -> Result<Vec<TokenId>>;
}

fn expand_units(units: &[u32], cfg: &ExpansionConfig, layout: &VocabLayout, rng: &mut Rng, out: &mut Vec<TokenId>) {
    for &u in units {
        let id = layout.speech_id(u);
        let mut n = cfg.factor;
        if cfg.jitter > 0.0 && rng.random::<f64>() < cfg.jitter {
            n += 1;
        }
        for _ in 0..n {
            out.push(id);
        }
    }
}

/// Oracle synthesis of a word list: every unit becomes `factor` copies of its
/// speech token, plus one with probability `jitter`.
pub fn synthesize_span(
    words: &[&str],
    lexicon: &UnitLexicon,
    cfg: &ExpansionConfig,
    layout: &VocabLayout,
    rng: &mut Rng,
) -> Result<TokenSequence> {
    cfg.validate()?;
    if layout.n_speech < lexicon.unit_cap {
        return Err(ForgeError::invalid(format!(
            "vocab has {} speech ids but the lexicon needs {}",
            layout.n_speech, lexicon.unit_cap
        )));
    }
    let mut out = Vec::new();
    for w in words {
        expand_units(&lexicon.word_to_units(w), cfg, layout, rng, &mut out);
    }
    Ok(TokenSequence::new(out))
}

/// Deterministic ground-truth text-to-token converter over a combined vocab.
///
/// Unit sequences are precomputed per text id so synthesis is a table walk.
#[derive(Debug, Clone)]
pub struct OracleSynth {
    layout: VocabLayout,
    expansion: ExpansionConfig,
    units_by_text_id: Vec<Vec<u32>>,
}

impl OracleSynth {
    pub fn new(lexicon: &UnitLexicon, vocab: &Vocab, expansion: ExpansionConfig) -> Result<Self> {
        expansion.validate()?;
        let layout = vocab.layout();
        if layout.n_speech < lexicon.unit_cap {
            return Err(ForgeError::invalid(format!(
                "vocab has {} speech ids but the lexicon needs {}",
                layout.n_speech, lexicon.unit_cap
            )));
        }
        let mut units_by_text_id = Vec::with_capacity(layout.speech_offset() as usize);
        for id in 0..layout.speech_offset() {
            let units = if layout.is_text(id) {
                lexicon.word_to_units(&vocab.words()[(id - layout.text_offset()) as usize])
            } else if id == special::UNK {
                lexicon.word_to_units("unk")
            } else {
                Vec::new()
            };
            units_by_text_id.push(units);
        }
        Ok(OracleSynth {
            layout,
            expansion,
            units_by_text_id,
        })
    }

    pub fn expansion(&self) -> ExpansionConfig {
        self.expansion
    }

    pub fn layout(&self) -> VocabLayout {
        self.layout
    }

    pub fn units(&self, text_id: TokenId) -> &[u32] {
        self.units_by_text_id
            .get(text_id as usize)
            .map_or(&[][..], |u| u.as_slice())
    }

    /// Append the speech rendering of `text_ids` to `out`.
    pub fn synthesize_into(&self, text_ids: &[TokenId], rng: &mut Rng, out: &mut Vec<TokenId>) {
        for &id in text_ids {
            expand_units(self.units(id), &self.expansion, &self.layout, rng, out);
        }
    }
}

impl TextToToken for OracleSynth {
    fn synthesize(&self, text_ids: &[TokenId], rng: &mut Rng) -> Result<Vec<TokenId>> {
        if let Some(&bad) = text_ids.iter().find(|&&id| id >= self.layout.speech_offset()) {
            return Err(ForgeError::invalid(format!("id {bad} is not a text id")));
        }
        let mut out = Vec::new();
        self.synthesize_into(text_ids, rng, &mut out);
        Ok(out)
    }
}
