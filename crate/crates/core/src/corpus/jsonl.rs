use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::{normalize_text, TextDoc};
use crate::error::{ForgeError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct JsonlStats {
    pub lines: usize,
    pub docs: usize,
    pub skipped: usize,
}

#[derive(Deserialize)]
struct Line {
    text: String,
    #[serde(default)]
    id: Option<serde_json::Value>,
}

/// Read a JSONL corpus. Malformed lines (bad JSON, missing `text`, blank text,
/// duplicate id) are logged and skipped; only an unreadable file is fatal.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<(Vec<TextDoc>, JsonlStats)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| ForgeError::io(path, e))?;
    parse_jsonl(BufReader::new(file)).map_err(|e| ForgeError::io(path, e))
}

pub fn parse_jsonl<R: BufRead>(reader: R) -> std::io::Result<(Vec<TextDoc>, JsonlStats)> {
    let mut stats = JsonlStats::default();
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;
        let parsed: Line = match serde_json::from_str(&line) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("line {}: skipping malformed record: {e}", lineno + 1);
                stats.skipped += 1;
                continue;
            }
        };
        if normalize_text(&parsed.text).is_empty() {
            log::warn!("line {}: skipping record with empty text", lineno + 1);
            stats.skipped += 1;
            continue;
        }
        let id = match parsed.id {
            Some(serde_json::Value::String(s)) => s,
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => format!("line-{}", lineno + 1),
        };
        if !seen.insert(id.clone()) {
            log::warn!("line {}: skipping duplicate id {id:?}", lineno + 1);
            stats.skipped += 1;
            continue;
        }
        docs.push(TextDoc {
            id,
            text: parsed.text,
        });
        stats.docs += 1;
    }
    Ok((docs, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn single_line() {
        let (docs, stats) = parse_jsonl(&b"{\"text\":\"hello world\"}\n"[..]).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].text, "hello world");
        assert_eq!(stats.skipped, 0);
    }

    #[test]
    fn empty_input() {
        let (docs, stats) = parse_jsonl(&b""[..]).unwrap();
        assert!(docs.is_empty());
        assert_eq!(stats, JsonlStats::default());
    }

    #[test]
    fn malformed_line_is_counted() {
        let input = "{\"text\":\"a b\"}\n{\"text\":\"c\", \"id\": \"x\"}\nnot json\n{\"text\":\"d e f\"}\n";
        let (docs, stats) = parse_jsonl(input.as_bytes()).unwrap();
        assert_eq!(docs.len(), 3);
        assert_eq!(stats.skipped, 1);
        assert_eq!(docs[1].id, "x");
        assert_eq!(docs[2].text, "d e f");
    }

    #[test]
    fn missing_text_and_duplicates_are_skipped() {
        let input = "{\"id\":1}\n{\"id\":1,\"text\":\"a\"}\n{\"id\":1,\"text\":\"b\"}\n{\"text\":\"   \"}\n";
        let (docs, stats) = parse_jsonl(input.as_bytes()).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(stats.skipped, 3);
    }

    #[test]
    fn unreadable_file_is_fatal() {
        assert!(matches!(
            load_jsonl("/nonexistent/corpus.jsonl"),
            Err(ForgeError::Io { .. })
        ));
    }

    #[test]
    fn file_roundtrip() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "{{\"text\":\"one two\"}}").unwrap();
        writeln!(f, "{{\"text\":\"three\"}}").unwrap();
        let (docs, _) = load_jsonl(f.path()).unwrap();
        assert_eq!(docs.len(), 2);
    }
}
