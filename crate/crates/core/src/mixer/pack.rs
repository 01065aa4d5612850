use serde::{Deserialize, Serialize};

use crate::corpus::{special, TokenSequence};
use crate::error::{ForgeError, Result};
use crate::text2token::ParallelPair;

/// Concatenates documents, each followed by a separator, and cuts the
/// stream into rows of `seq_len`. The last row is padded; padding is never
/// in the loss. Separators inherit `sep_in_loss`.
pub fn pack_sequences(docs: &[TokenSequence], seq_len: usize, sep_in_loss: bool) -> Result<Vec<TokenSequence>> {
    if seq_len < 2 {
        return Err(ForgeError::config("mixture.seq_len", "must be >= 2"));
    }
    let mut ids = Vec::new();
    let mut mask = Vec::new();
    for d in docs {
        ids.extend_from_slice(&d.ids);
        mask.extend(d.mask_or_all());
        ids.push(special::SEP);
        mask.push(sep_in_loss);
    }
    Ok(cut_rows(ids, mask, seq_len))
}

fn cut_rows(mut ids: Vec<u32>, mut mask: Vec<bool>, seq_len: usize) -> Vec<TokenSequence> {
    if ids.is_empty() {
        return Vec::new();
    }
    let rows = ids.len().div_ceil(seq_len);
    ids.resize(rows * seq_len, special::PAD);
    mask.resize(rows * seq_len, false);
    ids.chunks_exact(seq_len)
        .zip(mask.chunks_exact(seq_len))
        .map(|(i, m)| TokenSequence::with_mask(i.to_vec(), m.to_vec()))
        .collect()
}

/// Greedy first-fit packing that never splits a document across rows:
/// documents (each followed by an unmasked separator when it fits) are
/// appended to the current row until the next one does not fit.
pub fn pack_whole(docs: &[TokenSequence], seq_len: usize) -> Result<Vec<TokenSequence>> {
    if seq_len < 2 {
        return Err(ForgeError::config("mixture.seq_len", "must be >= 2"));
    }
    let mut rows = Vec::new();
    let mut ids: Vec<u32> = Vec::with_capacity(seq_len);
    let mut mask: Vec<bool> = Vec::with_capacity(seq_len);
    for d in docs {
        if d.len() > seq_len {
            return Err(ForgeError::invalid(format!(
                "document of {} tokens does not fit a row of {seq_len}",
                d.len()
            )));
        }
        if ids.len() + d.len() > seq_len {
            rows.extend(cut_rows(std::mem::take(&mut ids), std::mem::take(&mut mask), seq_len));
        }
        ids.extend_from_slice(&d.ids);
        mask.extend(d.mask_or_all());
        if ids.len() < seq_len {
            ids.push(special::SEP);
            mask.push(false);
        }
    }
    rows.extend(cut_rows(ids, mask, seq_len));
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Asr,
    Tts,
}

/// ASR: `[boa speech eoa text]`, loss on text. TTS: `[text boa speech eoa]`,
/// loss on speech and the closing eoa.
pub fn supervised_pair_format(pair: &ParallelPair, direction: Direction) -> Result<TokenSequence> {
    if pair.text.is_empty() || pair.speech.is_empty() {
        return Err(ForgeError::invalid("supervised pairs need both text and speech"));
    }
    Ok(match direction {
        Direction::Asr => {
            let mut ids = vec![special::BEGIN_OF_AUDIO];
            ids.extend_from_slice(&pair.speech);
            ids.push(special::END_OF_AUDIO);
            let prefix = ids.len();
            ids.extend_from_slice(&pair.text);
            let mask = (0..ids.len()).map(|i| i >= prefix).collect();
            TokenSequence::with_mask(ids, mask)
        }
        Direction::Tts => pair.to_sequence(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(n: usize, base: u32) -> TokenSequence {
        TokenSequence::new((0..n as u32).map(|i| base + i).collect())
    }

    #[test]
    fn doc_one_short_of_row_fills_it() {
        let rows = pack_sequences(&[doc(7, 20)], 8, true).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].ids[7], special::SEP);
        assert!(rows[0].mask_or_all().iter().all(|&m| m));
    }

    #[test]
    fn two_rows_without_padding() {
        let rows = pack_sequences(&[doc(7, 20), doc(7, 40)], 8, true).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().flat_map(|r| &r.ids).all(|&i| i != special::PAD));
    }

    #[test]
    fn tail_is_padded_and_unmasked() {
        let rows = pack_sequences(&[doc(10, 20)], 8, true).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(&rows[1].ids[3..], &[special::PAD; 5]);
        assert_eq!(rows[1].mask_or_all(), vec![true, true, true, false, false, false, false, false]);
        assert!(pack_sequences(&[], 8, true).unwrap().is_empty());
        assert!(pack_sequences(&[doc(1, 20)], 1, true).is_err());
    }

    #[test]
    fn whole_packing_keeps_documents_intact() {
        let docs = vec![doc(3, 20), doc(4, 30), doc(5, 40), doc(8, 50)];
        let rows = pack_whole(&docs, 8).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(&rows[0].ids[..8], &[20, 21, 22, special::SEP, 30, 31, 32, 33]);
        assert_eq!(&rows[1].ids[..6], &[40, 41, 42, 43, 44, special::SEP]);
        assert_eq!(rows[2].ids, (50..58).collect::<Vec<u32>>());
        assert!(pack_whole(&[doc(9, 1)], 8).is_err());
    }

    #[test]
    fn tts_and_asr_layouts() {
        let pair = ParallelPair {
            text: vec![10, 11],
            speech: vec![50, 51, 52],
        };
        let tts = supervised_pair_format(&pair, Direction::Tts).unwrap();
        assert_eq!(tts.ids, vec![10, 11, special::BEGIN_OF_AUDIO, 50, 51, 52, special::END_OF_AUDIO]);
        assert_eq!(tts.mask_or_all(), vec![false, false, false, true, true, true, true]);
        let asr = supervised_pair_format(&pair, Direction::Asr).unwrap();
        assert_eq!(asr.ids, vec![special::BEGIN_OF_AUDIO, 50, 51, 52, special::END_OF_AUDIO, 10, 11]);
        let mask = asr.mask_or_all();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 2);
        let prefix: Vec<u32> = asr.ids.iter().zip(&mask).take_while(|(_, &m)| !m).map(|(&i, _)| i).collect();
        assert_eq!(&prefix[1..prefix.len() - 1], &pair.speech[..]);
        let empty = ParallelPair {
            text: vec![],
            speech: vec![1],
        };
        assert!(supervised_pair_format(&empty, Direction::Asr).is_err());
    }
}
