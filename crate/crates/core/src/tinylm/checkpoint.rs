//! Binary checkpoint: magic, version, scalar tag, length-prefixed JSON
//! config, named little-endian parameter blobs, trailing CRC32.

use std::path::Path;

use super::config::LmConfig;
use super::params::Params;
use crate::error::{ForgeError, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FRGCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint<T: Scalar>(params: &Params<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let tag = T::TAG.as_bytes();
    out.push(tag.len() as u8);
    out.extend_from_slice(tag);
    let cfg = serde_json::to_vec(&params.config)?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    let groups = params.groups();
    out.extend_from_slice(&(groups.len() as u32).to_le_bytes());
    for (name, data) in groups {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for &x in data {
            x.write_le(&mut out);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(ForgeError::Blob(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_blob<S: Scalar>(r: &mut Reader<'_>, n: usize) -> Result<Vec<S>> {
    let bytes = r.take(n.checked_mul(S::BYTES).ok_or_else(|| ForgeError::Blob("blob too large".into()))?)?;
    Ok(bytes.chunks_exact(S::BYTES).map(S::read_le).collect())
}

fn decode_as<S: Scalar>(r: &mut Reader<'_>, config: &LmConfig) -> Result<Params<S>> {
    let n_groups = r.u32()? as usize;
    let mut params = Params::<S>::init(config)?;
    let expected: Vec<(String, usize)> = params.groups().into_iter().map(|(n, g)| (n, g.len())).collect();
    if n_groups != expected.len() {
        return Err(ForgeError::Blob(format!(
            "checkpoint has {n_groups} parameter groups, config implies {}",
            expected.len()
        )));
    }
    for ((name, len), (_, slot)) in expected.into_iter().zip(params.groups_mut()) {
        let nlen = r.u16()? as usize;
        let found = std::str::from_utf8(r.take(nlen)?).map_err(|_| ForgeError::Blob("bad group name".into()))?;
        if found != name {
            return Err(ForgeError::Blob(format!("expected group {name}, found {found}")));
        }
        let count = r.u64()? as usize;
        if count != len {
            return Err(ForgeError::Blob(format!("group {name} has {count} values, expected {len}")));
        }
        *slot = read_blob(r, count)?;
    }
    Ok(params)
}

/// Decodes a checkpoint, converting to `T` if it was stored at the other
/// precision.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Params<T>> {
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(ForgeError::Blob("not a checkpoint (bad magic)".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(ForgeError::Blob("checkpoint checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ForgeError::Blob(format!("unsupported checkpoint version {version}")));
    }
    let tlen = r.take(1)?[0] as usize;
    let tag = r.take(tlen)?.to_vec();
    let clen = r.u32()? as usize;
    let config: LmConfig = serde_json::from_slice(r.take(clen)?)?;
    config.validate()?;
    let params = match tag.as_slice() {
        b"f32" => decode_as::<f32>(&mut r, &config)?.cast::<T>(),
        b"f64" => decode_as::<f64>(&mut r, &config)?.cast::<T>(),
        other => {
            return Err(ForgeError::Blob(format!(
                "unknown scalar tag {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    if r.pos != body.len() {
        return Err(ForgeError::Blob("trailing bytes after parameters".into()));
    }
    Ok(params)
}

pub fn save_checkpoint<T: Scalar>(params: &Params<T>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(params)?;
    std::fs::write(path, bytes).map_err(|e| ForgeError::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Params<T>> {
    let bytes = std::fs::read(path).map_err(|e| ForgeError::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> LmConfig {
        LmConfig {
            vocab_size: 7,
            n_layers: 2,
            dim: 4,
            n_heads: 1,
            head_dim: 4,
            ffn_dim: 6,
            max_seq_len: 5,
            ..Default::default()
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let p = Params::<f32>::init(&cfg()).unwrap();
        let bytes = encode_checkpoint(&p).unwrap();
        let q: Params<f32> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(p, q);
        let p64 = Params::<f64>::init(&cfg()).unwrap();
        let q64: Params<f64> = decode_checkpoint(&encode_checkpoint(&p64).unwrap()).unwrap();
        assert_eq!(p64, q64);
    }

    #[test]
    fn cross_precision_load() {
        let p = Params::<f32>::init(&cfg()).unwrap();
        let q: Params<f64> = decode_checkpoint(&encode_checkpoint(&p).unwrap()).unwrap();
        assert_eq!(q.tok_emb[3], p.tok_emb[3] as f64);
    }

    #[test]
    fn corruption_detected() {
        let p = Params::<f32>::init(&cfg()).unwrap();
        let mut bytes = encode_checkpoint(&p).unwrap();
        let n = bytes.len();
        bytes[n / 2] ^= 1;
        assert!(decode_checkpoint::<f32>(&bytes).is_err());
        assert!(decode_checkpoint::<f32>(&bytes[..10]).is_err());
        assert!(decode_checkpoint::<f32>(b"garbage garbage").is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = Params::<f64>::init(&cfg()).unwrap();
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(load_checkpoint::<f64>(&path).unwrap(), p);
    }
}
