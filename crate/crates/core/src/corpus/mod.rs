//! Text ingestion, vocabularies, and binary training shards.

mod jsonl;
mod shard;
mod vocab;

pub use jsonl::{load_jsonl, parse_jsonl, JsonlStats};
pub use shard::{
    decode_shard, encode_shard, read_shard, write_shard, Shard, ShardHeader, ShardSummary,
    SHARD_MAGIC, SHARD_VERSION,
};
pub use vocab::{build_text_vocab, special, Vocab, VocabKind, VocabLayout};

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextDoc {
    pub id: String,
    pub text: String,
}

impl TextDoc {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        TextDoc {
            id: id.into(),
            text: text.into(),
        }
    }

    /// Lowercased whitespace-split words.
    pub fn words(&self) -> Vec<String> {
        normalize_words(&self.text)
    }
}

pub fn normalize_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

pub fn normalize_text(text: &str) -> String {
    normalize_words(text).join(" ")
}

/// Mixed-modality token ids with an optional per-position loss mask.
///
/// `loss_mask[t] == true` marks token `t` as a prediction target (predicted
/// from `ids[..t]`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_mask: Option<Vec<bool>>,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        TokenSequence {
            ids,
            loss_mask: None,
        }
    }

    pub fn with_mask(ids: Vec<TokenId>, mask: Vec<bool>) -> Self {
        assert_eq!(ids.len(), mask.len(), "mask length must match ids");
        TokenSequence {
            ids,
            loss_mask: Some(mask),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The mask, defaulting to "every position is a target".
    pub fn mask_or_all(&self) -> Vec<bool> {
        self.loss_mask
            .clone()
            .unwrap_or_else(|| vec![true; self.ids.len()])
    }
}

/// Encode a document with whitespace tokenization and lowercase normalization.
/// Out-of-vocabulary words map to `<unk>`.
pub fn encode_text(doc: &TextDoc, vocab: &Vocab) -> TokenSequence {
    encode_words(&doc.text, vocab)
}

pub fn encode_words(text: &str, vocab: &Vocab) -> TokenSequence {
    debug_assert!(vocab.kind() != VocabKind::Speech);
    let ids = text
        .split_whitespace()
        .map(|w| vocab.word_id(&w.to_lowercase()))
        .collect();
    TokenSequence::new(ids)
}

/// Inverse of [`encode_text`] for in-vocabulary text.
pub fn decode_text(ids: &[TokenId], vocab: &Vocab) -> String {
    ids.iter()
        .map(|&id| vocab.surface(id).unwrap_or(Cow::Borrowed("<invalid>")))
        .collect::<Vec<_>>()
        .join(" ")
}
