use serde::{Deserialize, Serialize};

use crate::corpus::special::{ASSISTANT, BEGIN_OF_AUDIO, END_OF_AUDIO, SYSTEM, TRANSCRIPT, USER};
use crate::corpus::{TokenId, TokenSequence};
use crate::error::{ForgeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialogueMode {
    /// The assistant answers in speech right away.
    Direct,
    /// The assistant first writes a transcript, then speaks it.
    TextGuided,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DialogueParts {
    pub system: Vec<TokenId>,
    pub instruction: Vec<TokenId>,
    pub text_response: Option<Vec<TokenId>>,
    pub speech_response: Option<Vec<TokenId>>,
}

/// Lays out a spoken exchange:
///
/// ```text
/// direct:      system sys.. user boa instr.. eoa assistant [boa speech.. eoa]
/// text-guided: system sys.. user boa instr.. eoa assistant transcript [text..
///              assistant [boa speech.. eoa]]
/// ```
///
/// Missing responses leave the sequence open at the point where generation
/// would continue.
pub fn format_dialogue(
    system: &[TokenId],
    instruction: &[TokenId],
    mode: DialogueMode,
    text_response: Option<&[TokenId]>,
    speech_response: Option<&[TokenId]>,
) -> Result<TokenSequence> {
    if instruction.is_empty() {
        return Err(ForgeError::invalid("speech instruction must be non-empty"));
    }
    let mut ids = vec![SYSTEM];
    ids.extend_from_slice(system);
    ids.extend([USER, BEGIN_OF_AUDIO]);
    ids.extend_from_slice(instruction);
    ids.extend([END_OF_AUDIO, ASSISTANT]);
    match mode {
        DialogueMode::Direct => {
            if text_response.is_some() {
                return Err(ForgeError::invalid("direct mode has no text response"));
            }
        }
        DialogueMode::TextGuided => {
            ids.push(TRANSCRIPT);
            match text_response {
                Some(t) => {
                    ids.extend_from_slice(t);
                    ids.push(ASSISTANT);
                }
                None if speech_response.is_some() => {
                    return Err(ForgeError::invalid("text-guided speech needs the text response first"));
                }
                None => return Ok(TokenSequence::new(ids)),
            }
        }
    }
    if let Some(s) = speech_response {
        ids.push(BEGIN_OF_AUDIO);
        ids.extend_from_slice(s);
        ids.push(END_OF_AUDIO);
    }
    Ok(TokenSequence::new(ids))
}

fn expect(ids: &[TokenId], pos: &mut usize, want: TokenId) -> Result<()> {
    if ids.get(*pos) != Some(&want) {
        return Err(ForgeError::invalid(format!("expected token {want} at position {pos}")));
    }
    *pos += 1;
    Ok(())
}

fn take_until(ids: &[TokenId], pos: &mut usize, stop: TokenId) -> Result<Vec<TokenId>> {
    let start = *pos;
    let end = ids[start..]
        .iter()
        .position(|&t| t == stop)
        .map(|o| start + o)
        .ok_or_else(|| ForgeError::invalid(format!("missing token {stop} after position {start}")))?;
    *pos = end;
    Ok(ids[start..end].to_vec())
}

/// Inverse of [`format_dialogue`].
pub fn parse_dialogue(ids: &[TokenId]) -> Result<(DialogueMode, DialogueParts)> {
    let mut pos = 0;
    expect(ids, &mut pos, SYSTEM)?;
    let system = take_until(ids, &mut pos, USER)?;
    expect(ids, &mut pos, USER)?;
    expect(ids, &mut pos, BEGIN_OF_AUDIO)?;
    let instruction = take_until(ids, &mut pos, END_OF_AUDIO)?;
    expect(ids, &mut pos, END_OF_AUDIO)?;
    expect(ids, &mut pos, ASSISTANT)?;
    let mut parts = DialogueParts {
        system,
        instruction,
        ..Default::default()
    };
    let mode = if ids.get(pos) == Some(&TRANSCRIPT) {
        pos += 1;
        if pos < ids.len() {
            parts.text_response = Some(take_until(ids, &mut pos, ASSISTANT)?);
            expect(ids, &mut pos, ASSISTANT)?;
        }
        DialogueMode::TextGuided
    } else {
        DialogueMode::Direct
    };
    if pos < ids.len() {
        expect(ids, &mut pos, BEGIN_OF_AUDIO)?;
        parts.speech_response = Some(take_until(ids, &mut pos, END_OF_AUDIO)?);
        expect(ids, &mut pos, END_OF_AUDIO)?;
    }
    if pos != ids.len() {
        return Err(ForgeError::invalid("trailing tokens after dialogue"));
    }
    Ok((mode, parts))
}
