use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::rng::fnv1a;

/// Speech tokens emitted per unit: `factor` frames, plus one extra frame with
/// probability `jitter`. The factor plays the role of the tokenizer frame rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionConfig {
    pub factor: u32,
    pub jitter: f64,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            factor: 2,
            jitter: 0.0,
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factor < 1 {
            return Err(ForgeError::config("expansion.factor", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(ForgeError::config("expansion.jitter", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Expected speech tokens for `units` units.
    pub fn expected_len(&self, units: usize) -> f64 {
        units as f64 * (self.factor as f64 + self.jitter)
    }
}

/// Word → pseudo-phoneme unit mapping for the toy speech domain.
///
/// Units are consecutive `chunk`-character pieces of the word. Chunks seen at
/// build time get inventory slots (up to `unit_cap`); any other chunk is
/// hashed into `[0, unit_cap)`, so the mapping is total.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitLexicon {
    pub chunk: usize,
    pub unit_cap: u32,
    pub units: Vec<String>,
    pub words: BTreeMap<String, Vec<u32>>,
    pub expansion: ExpansionConfig,
    #[serde(skip)]
    unit_index: HashMap<String, u32>,
}

impl PartialEq for UnitLexicon {
    fn eq(&self, other: &Self) -> bool {
        self.chunk == other.chunk
            && self.unit_cap == other.unit_cap
            && self.units == other.units
            && self.words == other.words
            && self.expansion == other.expansion
    }
}

/// Consecutive `size`-character pieces of `word`.
pub fn chunk_word(word: &str, size: usize) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars.chunks(size.max(1)).map(|c| c.iter().collect()).collect()
}

impl UnitLexicon {
    pub fn build<'a, I>(words: I, unit_cap: u32, chunk: usize, expansion: ExpansionConfig) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if unit_cap < 1 {
            return Err(ForgeError::config("unit_cap", "must be >= 1"));
        }
        if chunk < 1 {
            return Err(ForgeError::config("chunk", "must be >= 1"));
        }
        expansion.validate()?;
        let mut lex = UnitLexicon {
            chunk,
            unit_cap,
            units: Vec::new(),
            words: BTreeMap::new(),
            expansion,
            unit_index: HashMap::new(),
        };
        for w in words {
            if w.is_empty() || lex.words.contains_key(w) {
                continue;
            }
            for c in chunk_word(w, chunk) {
                if !lex.unit_index.contains_key(&c) && (lex.units.len() as u32) < unit_cap {
                    lex.unit_index.insert(c.clone(), lex.units.len() as u32);
                    lex.units.push(c);
                }
            }
            let units = lex.chunk_units(w);
            lex.words.insert(w.to_string(), units);
        }
        Ok(lex)
    }

    fn chunk_units(&self, word: &str) -> Vec<u32> {
        chunk_word(word, self.chunk)
            .iter()
            .map(|c| match self.unit_index.get(c) {
                Some(&u) => u,
                None => (fnv1a(c.as_bytes()) % self.unit_cap as u64) as u32,
            })
            .collect()
    }

    /// Unit sequence of a word; OOV words fall back to grapheme chunking.
    pub fn word_to_units(&self, word: &str) -> Vec<u32> {
        match self.words.get(word) {
            Some(u) => u.clone(),
            None => self.chunk_units(word),
        }
    }

    pub fn inventory_size(&self) -> usize {
        self.units.len()
    }

    fn reindex(&mut self) {
        self.unit_index = self
            .units
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i as u32))
            .collect();
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut lex: UnitLexicon = serde_json::from_str(s)?;
        lex.expansion.validate()?;
        if lex.units.len() as u32 > lex.unit_cap {
            return Err(ForgeError::invalid("unit inventory exceeds unit_cap"));
        }
        if lex.words.values().flatten().any(|&u| u >= lex.unit_cap) {
            return Err(ForgeError::invalid("lexicon unit id out of range"));
        }
        lex.reindex();
        Ok(lex)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| ForgeError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Free-function form of [`UnitLexicon::word_to_units`].
pub fn word_to_units(word: &str, lexicon: &UnitLexicon) -> Vec<u32> {
    lexicon.word_to_units(word)
}
