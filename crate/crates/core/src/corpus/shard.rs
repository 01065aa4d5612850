//! Binary shard format.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "FRGSHRD\0"
//! 8       4     version (u32)
//! 12      4     flags (bit 0: loss masks present)
//! 16      4     n_special
//! 20      4     n_text
//! 24      4     n_speech
//! 28      4     seq_len
//! 32      8     count (u64)
//! 40      4     payload crc32
//! 44      4     header crc32 over bytes [0, 44)
//! 48      ...   count*seq_len token ids, u32 little-endian
//! ...     ...   loss-mask bitstream, ceil(count*seq_len/8) bytes, LSB first (if flagged)
//! ```
//!
//! All integers are little-endian. A sequence written without a mask is read
//! back with no mask only when the whole shard is mask-free; in a mixed shard
//! it reads back with an all-true mask.

use std::path::Path;

use serde::Serialize;

use super::{TokenId, TokenSequence, VocabLayout};
use crate::error::{ForgeError, Result, ShardErrorKind};

pub const SHARD_MAGIC: &[u8; 8] = b"FRGSHRD\0";
pub const SHARD_VERSION: u32 = 1;
const HEADER_LEN: usize = 48;
const FLAG_MASKS: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ShardHeader {
    pub version: u32,
    pub has_masks: bool,
    pub layout: VocabLayout,
    pub seq_len: u32,
    pub count: u64,
    pub payload_crc: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub header: ShardHeader,
    pub sequences: Vec<TokenSequence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShardSummary {
    pub count: u64,
    pub seq_len: u32,
    pub bytes: u64,
    pub payload_crc: u32,
}

fn shard_err(path: &Path, kind: ShardErrorKind, offset: usize) -> ForgeError {
    ForgeError::Shard {
        path: path.to_path_buf(),
        kind,
        offset: offset as u64,
    }
}

/// Serialize packed sequences. All sequences must share one length and every
/// id must lie inside `layout`.
pub fn encode_shard(seqs: &[TokenSequence], layout: VocabLayout) -> Result<Vec<u8>> {
    let seq_len = seqs.first().map_or(0, |s| s.len());
    let vocab = layout.size();
    for (i, s) in seqs.iter().enumerate() {
        if s.len() != seq_len {
            return Err(ForgeError::invalid(format!(
                "sequence {i} has length {} but shard length is {seq_len}",
                s.len()
            )));
        }
        if let Some(&bad) = s.ids.iter().find(|&&id| id >= vocab) {
            return Err(ForgeError::invalid(format!("sequence {i}: id {bad} >= vocab size {vocab}")));
        }
    }
    let has_masks = seqs.iter().any(|s| s.loss_mask.is_some());
    let total = seqs.len() * seq_len;

    let mut payload = Vec::with_capacity(total * 4 + total / 8 + 1);
    for s in seqs {
        for &id in &s.ids {
            payload.extend_from_slice(&id.to_le_bytes());
        }
    }
    if has_masks {
        let mut bits = vec![0u8; total.div_ceil(8)];
        let mut pos = 0usize;
        for s in seqs {
            match &s.loss_mask {
                Some(m) => {
                    for &b in m {
                        if b {
                            bits[pos / 8] |= 1 << (pos % 8);
                        }
                        pos += 1;
                    }
                }
                None => {
                    for _ in 0..seq_len {
                        bits[pos / 8] |= 1 << (pos % 8);
                        pos += 1;
                    }
                }
            }
        }
        payload.extend_from_slice(&bits);
    }
    let payload_crc = crc32fast::hash(&payload);

    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(SHARD_MAGIC);
    out.extend_from_slice(&SHARD_VERSION.to_le_bytes());
    out.extend_from_slice(&(if has_masks { FLAG_MASKS } else { 0 }).to_le_bytes());
    out.extend_from_slice(&layout.n_special.to_le_bytes());
    out.extend_from_slice(&layout.n_text.to_le_bytes());
    out.extend_from_slice(&layout.n_speech.to_le_bytes());
    out.extend_from_slice(&(seq_len as u32).to_le_bytes());
    out.extend_from_slice(&(seqs.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload_crc.to_le_bytes());
    let header_crc = crc32fast::hash(&out);
    out.extend_from_slice(&header_crc.to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

/// Parse and validate a shard image. `path` is used only for error reporting.
pub fn decode_shard(bytes: &[u8], path: &Path) -> Result<Shard> {
    if bytes.len() < 8 {
        return Err(shard_err(path, ShardErrorKind::Truncated, bytes.len()));
    }
    if &bytes[..8] != SHARD_MAGIC {
        return Err(shard_err(path, ShardErrorKind::BadMagic, 0));
    }
    if bytes.len() < HEADER_LEN {
        return Err(shard_err(path, ShardErrorKind::Truncated, bytes.len()));
    }
    let version = u32_at(bytes, 8);
    if version != SHARD_VERSION {
        return Err(shard_err(path, ShardErrorKind::VersionMismatch { found: version }, 8));
    }
    if crc32fast::hash(&bytes[..44]) != u32_at(bytes, 44) {
        return Err(shard_err(path, ShardErrorKind::HeaderChecksum, 44));
    }
    let flags = u32_at(bytes, 12);
    let layout = VocabLayout {
        n_special: u32_at(bytes, 16),
        n_text: u32_at(bytes, 20),
        n_speech: u32_at(bytes, 24),
    };
    let seq_len = u32_at(bytes, 28) as usize;
    let count = u64::from_le_bytes(bytes[32..40].try_into().unwrap()) as usize;
    let payload_crc = u32_at(bytes, 40);
    let has_masks = flags & FLAG_MASKS != 0;

    let total = count
        .checked_mul(seq_len)
        .ok_or_else(|| shard_err(path, ShardErrorKind::Truncated, 32))?;
    let mask_bytes = if has_masks { total.div_ceil(8) } else { 0 };
    let expected = HEADER_LEN + total * 4 + mask_bytes;
    if bytes.len() < expected {
        return Err(shard_err(path, ShardErrorKind::Truncated, bytes.len()));
    }
    if bytes.len() > expected {
        return Err(shard_err(path, ShardErrorKind::TrailingBytes, expected));
    }
    let payload = &bytes[HEADER_LEN..];
    if crc32fast::hash(payload) != payload_crc {
        return Err(shard_err(path, ShardErrorKind::PayloadChecksum, HEADER_LEN));
    }

    let vocab = layout.size();
    let mut sequences = Vec::with_capacity(count);
    for row in 0..count {
        let mut ids = Vec::with_capacity(seq_len);
        for col in 0..seq_len {
            let off = (row * seq_len + col) * 4;
            let id = u32_at(payload, off) as TokenId;
            if id >= vocab {
                return Err(shard_err(path, ShardErrorKind::IdOutOfRange { id }, HEADER_LEN + off));
            }
            ids.push(id);
        }
        let loss_mask = has_masks.then(|| {
            let bits = &payload[total * 4..];
            (0..seq_len)
                .map(|col| {
                    let pos = row * seq_len + col;
                    bits[pos / 8] >> (pos % 8) & 1 == 1
                })
                .collect()
        });
        sequences.push(TokenSequence { ids, loss_mask });
    }
    Ok(Shard {
        header: ShardHeader {
            version,
            has_masks,
            layout,
            seq_len: seq_len as u32,
            count: count as u64,
            payload_crc,
        },
        sequences,
    })
}

pub fn write_shard(path: impl AsRef<Path>, seqs: &[TokenSequence], layout: VocabLayout) -> Result<ShardSummary> {
    let path = path.as_ref();
    let bytes = encode_shard(seqs, layout)?;
    std::fs::write(path, &bytes).map_err(|e| ForgeError::io(path, e))?;
    Ok(ShardSummary {
        count: seqs.len() as u64,
        seq_len: seqs.first().map_or(0, |s| s.len() as u32),
        bytes: bytes.len() as u64,
        payload_crc: u32_at(&bytes, 40),
    })
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<Shard> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| ForgeError::io(path, e))?;
    decode_shard(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LAYOUT: VocabLayout = VocabLayout {
        n_special: 9,
        n_text: 20,
        n_speech: 11,
    };

    fn fixture(n: usize, len: usize) -> Vec<TokenSequence> {
        (0..n)
            .map(|i| {
                let ids = (0..len).map(|j| ((i * 7 + j * 3) % 40) as u32).collect();
                let mask = (0..len).map(|j| (i + j) % 3 != 0).collect();
                TokenSequence::with_mask(ids, mask)
            })
            .collect()
    }

    #[test]
    fn roundtrip_ten_sequences() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.shard");
        let seqs = fixture(10, 13);
        let summary = write_shard(&path, &seqs, LAYOUT).unwrap();
        assert_eq!(summary.count, 10);
        assert_eq!(summary.bytes, (48 + 130 * 4 + 17) as u64);
        let shard = read_shard(&path).unwrap();
        assert_eq!(shard.sequences, seqs);
        assert_eq!(shard.header.layout, LAYOUT);
    }

    #[test]
    fn empty_list_is_valid() {
        let bytes = encode_shard(&[], LAYOUT).unwrap();
        let shard = decode_shard(&bytes, Path::new("mem")).unwrap();
        assert_eq!(shard.header.count, 0);
        assert!(shard.sequences.is_empty());
    }

    #[test]
    fn corrupt_payload_byte_fails_checksum() {
        let mut bytes = encode_shard(&fixture(10, 8), LAYOUT).unwrap();
        bytes[HEADER_LEN + 17] ^= 0x01;
        let err = decode_shard(&bytes, Path::new("mem")).unwrap_err();
        assert!(matches!(
            err,
            ForgeError::Shard {
                kind: ShardErrorKind::PayloadChecksum,
                ..
            }
        ));
    }

    #[test]
    fn corrupt_header_fails() {
        let mut bytes = encode_shard(&fixture(2, 4), LAYOUT).unwrap();
        bytes[29] ^= 0x10;
        assert!(matches!(
            decode_shard(&bytes, Path::new("mem")).unwrap_err(),
            ForgeError::Shard {
                kind: ShardErrorKind::HeaderChecksum,
                offset: 44,
                ..
            }
        ));
    }

    #[test]
    fn version_mismatch_and_truncation() {
        let bytes = encode_shard(&fixture(3, 5), LAYOUT).unwrap();
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(
            decode_shard(&v2, Path::new("mem")).unwrap_err(),
            ForgeError::Shard {
                kind: ShardErrorKind::VersionMismatch { found: 2 },
                ..
            }
        ));
        let cut = &bytes[..bytes.len() - 3];
        match decode_shard(cut, Path::new("mem")).unwrap_err() {
            ForgeError::Shard {
                kind: ShardErrorKind::Truncated,
                offset,
                ..
            } => assert_eq!(offset as usize, cut.len()),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unequal_lengths_rejected() {
        let seqs = vec![TokenSequence::new(vec![9, 10]), TokenSequence::new(vec![9])];
        assert!(encode_shard(&seqs, LAYOUT).is_err());
    }

    #[test]
    fn maskless_shard_stays_maskless() {
        let seqs = vec![TokenSequence::new(vec![9, 10, 11])];
        let shard = decode_shard(&encode_shard(&seqs, LAYOUT).unwrap(), Path::new("m")).unwrap();
        assert_eq!(shard.sequences, seqs);
        assert!(!shard.header.has_masks);
    }

    proptest! {
        #[test]
        fn roundtrip_is_byte_exact(rows in 0usize..6, len in 1usize..20, seed in any::<u64>()) {
            let mut x = seed;
            let seqs: Vec<TokenSequence> = (0..rows).map(|_| {
                let ids = (0..len).map(|_| { x = crate::rng::splitmix64(x); (x % 40) as u32 }).collect();
                let mask = (0..len).map(|_| { x = crate::rng::splitmix64(x); x & 1 == 1 }).collect();
                TokenSequence::with_mask(ids, mask)
            }).collect();
            let bytes = encode_shard(&seqs, LAYOUT).unwrap();
            let back = decode_shard(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(&back.sequences, &seqs);
            prop_assert_eq!(encode_shard(&back.sequences, LAYOUT).unwrap(), bytes);
        }
    }
}
