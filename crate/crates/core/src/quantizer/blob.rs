//! Versioned binary snapshot of a [`VqState`]: header, JSON config, then
//! row-major f32 codebook, cluster sizes, embed sums and usage, then CRC32.

use std::path::Path;

use super::matrix::Matrix;
use super::vq::{VqConfig, VqState};
use crate::error::{ForgeError, Result};
use crate::scalar::Scalar;

pub const VQ_MAGIC: &[u8; 8] = b"FRGVQST\0";
pub const VQ_VERSION: u32 = 1;

pub fn encode_vq_state<T: Scalar>(state: &VqState<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(VQ_MAGIC);
    out.extend_from_slice(&VQ_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&state.config)?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(state.config.codebook_size as u32).to_le_bytes());
    out.extend_from_slice(&(state.config.dim as u32).to_le_bytes());
    out.extend_from_slice(&state.step.to_le_bytes());
    let arrays: [&[T]; 4] = [
        state.codebook.as_slice(),
        &state.cluster_size,
        state.embed_sum.as_slice(),
        &state.usage,
    ];
    for a in arrays {
        for &x in a {
            out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_vq_state<T: Scalar>(bytes: &[u8]) -> Result<VqState<T>> {
    let bad = |m: &str| ForgeError::Blob(format!("vq state: {m}"));
    if bytes.len() < 16 || &bytes[..8] != VQ_MAGIC {
        return Err(bad("bad magic"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(bad("checksum mismatch"));
    }
    let mut pos = 8;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = body.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
        pos += n;
        Ok(s)
    };
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VQ_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let clen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let config: VqConfig = serde_json::from_slice(take(clen)?)?;
    config.validate()?;
    let k = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    if k != config.codebook_size || d != config.dim {
        return Err(bad("shape disagrees with config"));
    }
    let step = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let mut floats = |n: usize| -> Result<Vec<T>> {
        Ok(take(n * 4)?
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect())
    };
    let codebook = Matrix::from_vec(k, d, floats(k * d)?)?;
    let cluster_size = floats(k)?;
    let embed_sum = Matrix::from_vec(k, d, floats(k * d)?)?;
    let usage = floats(k)?;
    if pos != body.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(VqState {
        config,
        codebook,
        cluster_size,
        embed_sum,
        usage,
        step,
    })
}

pub fn save_vq_state<T: Scalar>(state: &VqState<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_vq_state(state)?).map_err(|e| ForgeError::io(path, e))
}

pub fn load_vq_state<T: Scalar>(path: &Path) -> Result<VqState<T>> {
    let bytes = std::fs::read(path).map_err(|e| ForgeError::io(path, e))?;
    decode_vq_state(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn roundtrip_f32_exact() {
        let cfg = VqConfig {
            codebook_size: 4,
            dim: 3,
            ..Default::default()
        };
        let rows: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32, 0.5 * i as f32, -1.0]).collect();
        let b = Matrix::from_rows(&rows).unwrap();
        let mut s = VqState::from_batch(&cfg, &b, &mut seeded(0)).unwrap();
        s.train_step(&b, &mut seeded(1)).unwrap();
        let bytes = encode_vq_state(&s).unwrap();
        assert_eq!(decode_vq_state::<f32>(&bytes).unwrap(), s);
        let mut broken = bytes.clone();
        broken[40] ^= 0x10;
        assert!(decode_vq_state::<f32>(&broken).is_err());
        assert!(decode_vq_state::<f32>(&bytes[..20]).is_err());
    }
}
