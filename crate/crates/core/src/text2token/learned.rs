use serde::{Deserialize, Serialize};

use super::synth::TextToToken;
use crate::corpus::{special, TokenId, TokenSequence, VocabLayout};
use crate::error::{ForgeError, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tinylm::{generate, train, LmConfig, Params, Sampling, StepLog, TrainConfig, TrainOutcome};

/// Text ids with the speech ids they should produce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub text: Vec<TokenId>,
    pub speech: Vec<TokenId>,
}

impl ParallelPair {
    pub fn validate(&self, layout: &VocabLayout) -> Result<()> {
        if !self.text.is_empty() && self.speech.is_empty() {
            return Err(ForgeError::invalid("pair has text but no speech"));
        }
        if let Some(&id) = self.text.iter().find(|&&id| !layout.is_text(id)) {
            return Err(ForgeError::invalid(format!("pair text contains non-text id {id}")));
        }
        if let Some(&id) = self.speech.iter().find(|&&id| !layout.is_speech(id)) {
            return Err(ForgeError::invalid(format!("pair speech contains non-speech id {id}")));
        }
        Ok(())
    }

    /// `[text boa speech eoa]`, with the loss on speech and the closing eoa.
    pub fn to_sequence(&self) -> TokenSequence {
        let mut ids = self.text.clone();
        ids.push(special::BEGIN_OF_AUDIO);
        let mut mask = vec![false; ids.len()];
        ids.extend_from_slice(&self.speech);
        ids.push(special::END_OF_AUDIO);
        mask.resize(ids.len(), true);
        TokenSequence::with_mask(ids, mask)
    }
}

/// Pads every sequence with PAD (unmasked) to the longest one.
pub fn pad_to_common_length(seqs: &mut [TokenSequence]) -> usize {
    let len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    for s in seqs.iter_mut() {
        let mut mask = s.mask_or_all();
        s.ids.resize(len, special::PAD);
        mask.resize(len, false);
        s.loss_mask = Some(mask);
    }
    len
}

/// Fits the model to predict speech given text. Only speech positions
/// (and the closing eoa) carry loss.
pub fn train_t2t<T: Scalar>(
    pairs: &[ParallelPair],
    layout: &VocabLayout,
    lm: &LmConfig,
    cfg: &TrainConfig,
    on_step: impl FnMut(&StepLog),
) -> Result<TrainOutcome<T>> {
    if pairs.is_empty() {
        return Err(ForgeError::invalid("no parallel pairs to train on"));
    }
    if lm.vocab_size < layout.size() as usize {
        return Err(ForgeError::config("lm.vocab_size", format!("must be >= {}", layout.size())));
    }
    for p in pairs {
        p.validate(layout)?;
    }
    let mut seqs: Vec<TokenSequence> = pairs.iter().map(ParallelPair::to_sequence).collect();
    let len = pad_to_common_length(&mut seqs);
    if len - 1 > lm.max_seq_len {
        return Err(ForgeError::config(
            "lm.max_seq_len",
            format!("longest pair needs {} positions", len - 1),
        ));
    }
    train(Params::<T>::init(lm)?, &seqs, cfg, on_step)
}

/// Greedy decoding with a trained model until eoa.
#[derive(Debug, Clone)]
pub struct LearnedSynth<T> {
    pub params: Params<T>,
    pub layout: VocabLayout,
    pub max_tokens: usize,
}

impl<T: Scalar> TextToToken for LearnedSynth<T> {
    fn synthesize(&self, text_ids: &[TokenId], rng: &mut Rng) -> Result<Vec<TokenId>> {
        if text_ids.is_empty() {
            return Ok(Vec::new());
        }
        let mut prompt = text_ids.to_vec();
        prompt.push(special::BEGIN_OF_AUDIO);
        let out = generate(&self.params, &prompt, self.max_tokens, Some(special::END_OF_AUDIO), Sampling::Greedy, rng)?;
        Ok(out.into_iter().filter(|&id| self.layout.is_speech(id)).collect())
    }
}
