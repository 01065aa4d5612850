use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TextDoc, TokenId};
use crate::error::{ForgeError, Result};

/// Reserved ids shared by every vocabulary. Content ids start at [`special::COUNT`].
pub mod special {
    use super::TokenId;

    pub const PAD: TokenId = 0;
    pub const UNK: TokenId = 1;
    /// Document separator used by sequence packing.
    pub const SEP: TokenId = 2;
    pub const BEGIN_OF_AUDIO: TokenId = 3;
    pub const END_OF_AUDIO: TokenId = 4;
    pub const SYSTEM: TokenId = 5;
    pub const USER: TokenId = 6;
    pub const ASSISTANT: TokenId = 7;
    pub const TRANSCRIPT: TokenId = 8;
    pub const COUNT: u32 = 9;

    pub const NAMES: [&str; COUNT as usize] = [
        "<pad>",
        "<unk>",
        "<sep>",
        "<|begin_of_audio|>",
        "<|end_of_audio|>",
        "<|system|>",
        "<|user|>",
        "<|assistant|>",
        "<|transcript|>",
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabKind {
    Text,
    Speech,
    Combined,
}

/// Id ranges of a vocabulary: `[specials | text words | speech units]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabLayout {
    pub n_special: u32,
    pub n_text: u32,
    pub n_speech: u32,
}

impl VocabLayout {
    pub fn size(&self) -> u32 {
        self.n_special + self.n_text + self.n_speech
    }

    pub fn text_offset(&self) -> u32 {
        self.n_special
    }

    pub fn speech_offset(&self) -> u32 {
        self.n_special + self.n_text
    }

    #[inline]
    pub fn is_special(&self, id: TokenId) -> bool {
        id < self.n_special
    }

    #[inline]
    pub fn is_text(&self, id: TokenId) -> bool {
        id >= self.n_special && id < self.speech_offset()
    }

    #[inline]
    pub fn is_speech(&self, id: TokenId) -> bool {
        id >= self.speech_offset() && id < self.size()
    }

    /// Speech token id for a unit index.
    #[inline]
    pub fn speech_id(&self, unit: u32) -> TokenId {
        debug_assert!(unit < self.n_speech);
        self.speech_offset() + unit
    }
}

#[derive(Debug, Clone)]
pub struct Vocab {
    kind: VocabKind,
    words: Vec<String>,
    n_speech: u32,
    index: HashMap<String, TokenId>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.words == other.words && self.n_speech == other.n_speech
    }
}

impl Vocab {
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        Self::assemble(VocabKind::Text, words, 0)
    }

    /// A speech-only vocabulary with `n_speech` unit tokens.
    pub fn speech(n_speech: u32) -> Self {
        Self::assemble(VocabKind::Speech, Vec::new(), n_speech).expect("no words to collide")
    }

    fn assemble(kind: VocabKind, words: Vec<String>, n_speech: u32) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if special::NAMES.contains(&w.as_str()) || is_speech_surface(w) {
                return Err(ForgeError::invalid(format!("word {w:?} collides with a reserved token")));
            }
            if index.insert(w.clone(), special::COUNT + i as TokenId).is_some() {
                return Err(ForgeError::invalid(format!("duplicate word {w:?}")));
            }
        }
        Ok(Vocab {
            kind,
            words,
            n_speech,
            index,
        })
    }

    /// Extend a text vocabulary with a block of speech tokens placed after
    /// every text id.
    pub fn extend_with_speech(&self, n_speech: u32) -> Vocab {
        Vocab {
            kind: VocabKind::Combined,
            words: self.words.clone(),
            n_speech,
            index: self.index.clone(),
        }
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn layout(&self) -> VocabLayout {
        VocabLayout {
            n_special: special::COUNT,
            n_text: self.words.len() as u32,
            n_speech: self.n_speech,
        }
    }

    pub fn len(&self) -> usize {
        self.layout().size() as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Id of a (normalized) word, `<unk>` when absent.
    pub fn word_id(&self, word: &str) -> TokenId {
        self.index.get(word).copied().unwrap_or(special::UNK)
    }

    pub fn get(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<Cow<'_, str>> {
        let layout = self.layout();
        if layout.is_special(id) {
            Some(Cow::Borrowed(special::NAMES[id as usize]))
        } else if layout.is_text(id) {
            Some(Cow::Borrowed(&self.words[(id - special::COUNT) as usize]))
        } else if layout.is_speech(id) {
            Some(Cow::Owned(speech_surface(id - layout.speech_offset())))
        } else {
            None
        }
    }

    /// All `(surface, id)` entries in id order.
    pub fn entries(&self) -> Vec<(String, TokenId)> {
        let layout = self.layout();
        let mut out = Vec::with_capacity(self.len());
        for (i, name) in special::NAMES.iter().enumerate() {
            out.push((name.to_string(), i as TokenId));
        }
        for (i, w) in self.words.iter().enumerate() {
            out.push((w.clone(), layout.text_offset() + i as TokenId));
        }
        for u in 0..self.n_speech {
            out.push((speech_surface(u), layout.speech_id(u)));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabFile {
            kind: self.kind,
            special: special::NAMES
                .iter()
                .enumerate()
                .map(|(i, n)| (n.to_string(), i as TokenId))
                .collect(),
            entries: self.entries(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(s)?;
        let mut words = Vec::new();
        let mut n_speech = 0u32;
        for (pos, (surface, id)) in file.entries.iter().enumerate() {
            if *id as usize != pos {
                return Err(ForgeError::invalid(format!("vocab ids are not dense at {pos}")));
            }
            if pos < special::COUNT as usize {
                if surface != special::NAMES[pos] {
                    return Err(ForgeError::invalid(format!("unexpected special {surface:?} at {pos}")));
                }
            } else if is_speech_surface(surface) {
                n_speech += 1;
            } else {
                if n_speech > 0 {
                    return Err(ForgeError::invalid("text entry after speech entries"));
                }
                words.push(surface.clone());
            }
        }
        let vocab = Self::assemble(file.kind, words, n_speech)?;
        if vocab.kind == VocabKind::Text && n_speech > 0 {
            return Err(ForgeError::invalid("text vocab carries speech entries"));
        }
        Ok(vocab)
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

fn speech_surface(unit: u32) -> String {
    format!("<|speech_{unit}|>")
}

fn is_speech_surface(s: &str) -> bool {
    s.strip_prefix("<|speech_")
        .and_then(|r| r.strip_suffix("|>"))
        .is_some_and(|n| n.parse::<u32>().is_ok())
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    kind: VocabKind,
    special: BTreeMap<String, TokenId>,
    entries: Vec<(String, TokenId)>,
}

/// Build a word-level vocabulary: specials first, then words by descending
/// frequency with ties broken by first occurrence.
pub fn build_text_vocab<'a, I>(docs: I, max_size: usize, min_freq: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a TextDoc>,
{
    let specials = special::COUNT as usize;
    if max_size < specials + 1 {
        return Err(ForgeError::config(
            "max_size",
            format!("must be at least {} (specials + 1), got {max_size}", specials + 1),
        ));
    }
    // word -> (count, first occurrence)
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    let mut order = 0usize;
    for doc in docs {
        for w in doc.text.split_whitespace() {
            let w = w.to_lowercase();
            let entry = counts.entry(w).or_insert((0, order));
            entry.0 += 1;
            order += 1;
        }
    }
    let mut ranked: Vec<(String, usize, usize)> = counts
        .into_iter()
        .filter(|(w, (c, _))| *c >= min_freq && !special::NAMES.contains(&w.as_str()) && !is_speech_surface(w))
        .map(|(w, (c, first))| (w, c, first))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.truncate(max_size - specials);
    Vocab::from_words(ranked.into_iter().map(|(w, _, _)| w).collect())
}
