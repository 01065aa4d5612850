use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{ForgeError, Result};

/// Modality of context and candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Setting {
    /// Speech context, speech candidates.
    #[serde(rename = "S")]
    S,
    /// Text context, speech candidates.
    #[serde(rename = "TS")]
    TextToSpeech,
    /// Speech context, text candidates.
    #[serde(rename = "ST")]
    SpeechToText,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::S, Setting::TextToSpeech, Setting::SpeechToText];

    pub fn code(self) -> &'static str {
        match self {
            Setting::S => "S",
            Setting::TextToSpeech => "TS",
            Setting::SpeechToText => "ST",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "S" => Ok(Setting::S),
            "TS" | "T->S" | "T→S" => Ok(Setting::TextToSpeech),
            "ST" | "S->T" | "S→T" => Ok(Setting::SpeechToText),
            other => Err(ForgeError::config("settings", format!("unknown setting {other:?}; expected S, TS or ST"))),
        }
    }

    /// Whether candidates (or answers) are speech.
    pub fn speech_output(self) -> bool {
        !matches!(self, Setting::SpeechToText)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContinuationItem {
    pub setting: Setting,
    pub context: Vec<TokenId>,
    pub candidates: Vec<Vec<TokenId>>,
    pub correct: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact: Option<usize>,
}

impl ContinuationItem {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.len() < 2 {
            return Err(ForgeError::invalid("continuation items need at least two candidates"));
        }
        if self.correct >= self.candidates.len() {
            return Err(ForgeError::invalid("correct index out of range"));
        }
        if self.context.is_empty() || self.candidates.iter().any(Vec::is_empty) {
            return Err(ForgeError::invalid("empty context or candidate"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub setting: Setting,
    /// Question words as text ids.
    pub question_text: Vec<TokenId>,
    /// Model input: spoken question followed by the answer cue.
    pub prompt: Vec<TokenId>,
    pub answer: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact: Option<usize>,
}

/// Either item kind, tagged, for one shared JSONL file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalItem {
    Continuation(ContinuationItem),
    Qa(QaItem),
}

pub fn write_items_jsonl(path: &Path, items: &[EvalItem]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| ForgeError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").map_err(|e| ForgeError::io(path, e))?;
    }
    w.flush().map_err(|e| ForgeError::io(path, e))
}

pub fn read_items_jsonl(path: &Path) -> Result<Vec<EvalItem>> {
    let file = std::fs::File::open(path).map_err(|e| ForgeError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ForgeError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: EvalItem = serde_json::from_str(&line)
            .map_err(|e| ForgeError::invalid(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(item);
    }
    Ok(out)
}
