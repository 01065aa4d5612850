use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::items::{ContinuationItem, QaItem, Setting};
use crate::corpus::{special, TextDoc, TokenId, Vocab};
use crate::error::{ForgeError, Result};
use crate::rng::{derive_rng, Rng};
use crate::text2token::{ExpansionConfig, OracleSynth, TextToToken, UnitLexicon};

const CONSONANTS: &[char] = &['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

/// The word that links a subject to its value; doubles as the answer cue.
pub const CUE_WORD: &str = "is";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_values: usize,
    pub n_fillers: usize,
    /// Share of facts held out from every speech-bearing source.
    pub eval_fraction: f64,
    pub facts_per_doc: usize,
    /// Characters per speech unit: 2 gives one unit per syllable, 6 or
    /// more one unit per word.
    pub unit_chars: usize,
    pub expansion: ExpansionConfig,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_entities: 64,
            n_relations: 4,
            n_values: 12,
            n_fillers: 24,
            eval_fraction: 0.5,
            facts_per_doc: 12,
            unit_chars: 6,
            expansion: ExpansionConfig::default(),
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_entities < 4 {
            return Err(ForgeError::config("world.n_entities", "must be >= 4"));
        }
        if self.n_relations == 0 {
            return Err(ForgeError::config("world.n_relations", "must be >= 1"));
        }
        if self.n_values < 2 {
            return Err(ForgeError::config("world.n_values", "must be >= 2"));
        }
        if !(0.0..=1.0).contains(&self.eval_fraction) {
            return Err(ForgeError::config("world.eval_fraction", "must lie in [0, 1]"));
        }
        if self.unit_chars == 0 || self.unit_chars % 2 == 1 {
            return Err(ForgeError::config("world.unit_chars", "must be a positive even number"));
        }
        if self.facts_per_doc == 0 {
            return Err(ForgeError::config("world.facts_per_doc", "must be >= 1"));
        }
        self.expansion.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub entity: String,
    pub relation: String,
    pub value: String,
}

/// A synthetic knowledge base with its lexicon, vocabulary and evaluation
/// items. Entities, relations, values and fillers are disjoint word sets.
#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub config: WorldConfig,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub values: Vec<String>,
    pub fillers: Vec<String>,
    pub facts: Vec<Fact>,
    /// Facts used for evaluation; they appear only as plain text in training.
    pub eval_facts: Vec<usize>,
    /// Remaining facts, free to appear in any modality.
    pub train_facts: Vec<usize>,
    pub vocab: Vocab,
    pub lexicon: UnitLexicon,
    pub synth: OracleSynth,
    /// One text pass over every fact.
    pub docs: Vec<TextDoc>,
    pub items: Vec<ContinuationItem>,
    pub qa: Vec<QaItem>,
}

fn syllable_inventory() -> Vec<String> {
    CONSONANTS
        .iter()
        .flat_map(|c| VOWELS.iter().map(move |v| format!("{c}{v}")))
        .collect()
}

fn fresh_words(n: usize, syllables: usize, used: &mut HashSet<String>, rng: &mut Rng) -> Result<Vec<String>> {
    let inv = syllable_inventory();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > 100_000 {
            return Err(ForgeError::config("world", "word space exhausted; lower the word counts"));
        }
        let w: String = (0..syllables).map(|_| inv[rng.random_range(0..inv.len())].as_str()).collect();
        if used.insert(w.clone()) {
            out.push(w);
        }
    }
    Ok(out)
}

pub fn gen_toy_world(config: &WorldConfig) -> Result<ToyWorld> {
    config.validate()?;
    let mut rng = derive_rng(config.seed, &[0x3d]);
    let mut used: HashSet<String> = [CUE_WORD.to_string()].into_iter().collect();
    let entities = fresh_words(config.n_entities, 3, &mut used, &mut rng)?;
    let relations = fresh_words(config.n_relations, 2, &mut used, &mut rng)?;
    let values = fresh_words(config.n_values, 2, &mut used, &mut rng)?;
    let fillers = fresh_words(config.n_fillers, 2, &mut used, &mut rng)?;

    let mut facts = Vec::new();
    for e in &entities {
        for r in &relations {
            facts.push(Fact {
                entity: e.clone(),
                relation: r.clone(),
                value: values[rng.random_range(0..values.len())].clone(),
            });
        }
    }
    let mut order: Vec<usize> = (0..facts.len()).collect();
    order.shuffle(&mut rng);
    let n_eval = (config.eval_fraction * facts.len() as f64).round() as usize;
    let mut eval_facts = order[..n_eval].to_vec();
    let mut train_facts = order[n_eval..].to_vec();
    eval_facts.sort_unstable();
    train_facts.sort_unstable();

    let mut words: Vec<String> = vec![CUE_WORD.to_string()];
    for set in [&entities, &relations, &values, &fillers] {
        words.extend(set.iter().cloned());
    }
    let mut units = HashSet::new();
    for w in &words {
        units.extend(crate::text2token::chunk_word(w, config.unit_chars));
    }
    // one spare slot for out-of-lexicon words
    let unit_cap = units.len() as u32 + 1;
    let lexicon = UnitLexicon::build(words.iter().map(String::as_str), unit_cap, config.unit_chars, config.expansion)?;
    let vocab = Vocab::from_words(words)?.extend_with_speech(unit_cap);
    let synth = OracleSynth::new(&lexicon, &vocab, config.expansion)?;

    let mut world = ToyWorld {
        config: config.clone(),
        entities,
        relations,
        values,
        fillers,
        facts,
        eval_facts,
        train_facts,
        vocab,
        lexicon,
        synth,
        docs: Vec::new(),
        items: Vec::new(),
        qa: Vec::new(),
    };
    let all: Vec<usize> = (0..world.facts.len()).collect();
    world.docs = world.fact_docs(&all, 1, derive_rng(config.seed, &[0x3e]).random());
    let (items, qa) = world.items_for(&world.eval_facts, &mut rng);
    world.items = items;
    world.qa = qa;
    Ok(world)
}

impl ToyWorld {
    pub fn id(&self, word: &str) -> TokenId {
        self.vocab.word_id(word)
    }

    pub fn cue(&self) -> TokenId {
        self.id(CUE_WORD)
    }

    /// Speech rendering of text ids.
    pub fn speak(&self, ids: &[TokenId], rng: &mut Rng) -> Vec<TokenId> {
        self.synth.synthesize(ids, rng).expect("world ids are text ids")
    }

    pub fn fact_words(&self, fact: usize) -> [TokenId; 4] {
        let f = &self.facts[fact];
        [self.id(&f.entity), self.id(&f.relation), self.cue(), self.id(&f.value)]
    }

    /// `passes` shuffled passes over `subset`, cut into documents of
    /// `facts_per_doc` facts each.
    pub fn fact_docs(&self, subset: &[usize], passes: usize, seed: u64) -> Vec<TextDoc> {
        let mut rng = derive_rng(seed, &[0xfa]);
        let mut docs = Vec::new();
        for p in 0..passes {
            let mut order = subset.to_vec();
            order.shuffle(&mut rng);
            for (i, chunk) in order.chunks(self.config.facts_per_doc).enumerate() {
                let text: Vec<String> = chunk
                    .iter()
                    .map(|&f| {
                        let fact = &self.facts[f];
                        format!("{} {} {CUE_WORD} {}", fact.entity, fact.relation, fact.value)
                    })
                    .collect();
                docs.push(TextDoc::new(format!("facts-{seed}-{p}-{i}"), text.join(" ")));
            }
        }
        docs
    }

    /// Random word strings over fillers and content words that never use the
    /// cue word, so no fact statement can occur in them.
    pub fn filler_sentences(&self, n: usize, min_len: usize, max_len: usize, seed: u64) -> Vec<Vec<TokenId>> {
        let mut rng = derive_rng(seed, &[0xf1]);
        let pool: Vec<TokenId> = self
            .fillers
            .iter()
            .chain(&self.entities)
            .chain(&self.relations)
            .chain(&self.values)
            .map(|w| self.id(w))
            .collect();
        (0..n)
            .map(|_| {
                let len = rng.random_range(min_len..=max_len);
                (0..len).map(|_| pool[rng.random_range(0..pool.len())]).collect()
            })
            .collect()
    }

    pub fn lookup(&self, entity: &str, relation: &str) -> Option<&str> {
        self.facts
            .iter()
            .find(|f| f.entity == entity && f.relation == relation)
            .map(|f| f.value.as_str())
    }

    fn distractor(&self, value: &str, rng: &mut Rng) -> String {
        loop {
            let v = &self.values[rng.random_range(0..self.values.len())];
            if v != value {
                return v.clone();
            }
        }
    }

    /// Continuation items (one per setting) and QA items for `facts`.
    pub fn items_for(&self, facts: &[usize], rng: &mut Rng) -> (Vec<ContinuationItem>, Vec<QaItem>) {
        let mut items = Vec::new();
        let mut qa = Vec::new();
        let boa = special::BEGIN_OF_AUDIO;
        let eoa = special::END_OF_AUDIO;
        for &f in facts {
            let fact = &self.facts[f];
            let [e, r, is, v] = self.fact_words(f);
            let wrong = self.id(&self.distractor(&fact.value, rng));
            let mut srng = derive_rng(self.config.seed, &[0x5e, f as u64]);
            let s_er = self.speak(&[e, r], &mut srng);
            let s_eris = self.speak(&[e, r, is], &mut srng);
            let s_v = self.speak(&[v], &mut srng);
            let s_wrong = self.speak(&[wrong], &mut srng);
            for setting in Setting::ALL {
                let correct = rng.random_range(0..2usize);
                let (context, good, bad) = match setting {
                    Setting::TextToSpeech => (vec![e, r, is, boa], s_v.clone(), s_wrong.clone()),
                    Setting::S => ([&[boa][..], &s_eris].concat(), s_v.clone(), s_wrong.clone()),
                    Setting::SpeechToText => ([&[boa][..], &s_eris, &[eoa]].concat(), vec![v], vec![wrong]),
                };
                let candidates = if correct == 0 { vec![good, bad] } else { vec![bad, good] };
                items.push(ContinuationItem {
                    setting,
                    context,
                    candidates,
                    correct,
                    fact: Some(f),
                });
            }
            let question: Vec<TokenId> = [&[boa][..], &s_er, &[eoa, is]].concat();
            qa.push(QaItem {
                setting: Setting::SpeechToText,
                question_text: vec![e, r],
                prompt: question.clone(),
                answer: vec![v],
                fact: Some(f),
            });
            qa.push(QaItem {
                setting: Setting::S,
                question_text: vec![e, r],
                prompt: [&question[..], &[boa]].concat(),
                answer: s_v.clone(),
                fact: Some(f),
            });
        }
        (items, qa)
    }

    /// Independent consistency check: re-derive the subject from the
    /// context by matching every (entity, relation) rendering, look the fact
    /// up and confirm the correct candidate renders its value while the
    /// other candidates do not.
    pub fn verify_item(&self, item: &ContinuationItem) -> bool {
        let mut rng = derive_rng(0, &[0]);
        let boa = special::BEGIN_OF_AUDIO;
        let eoa = special::END_OF_AUDIO;
        let render_value = |v: &str, rng: &mut Rng| -> Vec<TokenId> {
            if item.setting.speech_output() {
                self.speak(&[self.id(v)], rng)
            } else {
                vec![self.id(v)]
            }
        };
        let mut subjects: BTreeMap<(String, String), ()> = BTreeMap::new();
        for e in &self.entities {
            for r in &self.relations {
                let words = [self.id(e), self.id(r), self.cue()];
                let ctx = match item.setting {
                    Setting::TextToSpeech => [&words[..], &[boa]].concat(),
                    Setting::S => [&[boa][..], &self.speak(&words, &mut rng)].concat(),
                    Setting::SpeechToText => [&[boa][..], &self.speak(&words, &mut rng), &[eoa]].concat(),
                };
                if ctx == item.context {
                    subjects.insert((e.clone(), r.clone()), ());
                }
            }
        }
        if subjects.len() != 1 {
            return false;
        }
        let (e, r) = subjects.into_keys().next().unwrap();
        let Some(value) = self.lookup(&e, &r) else {
            return false;
        };
        let truth = render_value(value, &mut rng);
        item.candidates.iter().enumerate().all(|(i, c)| (i == item.correct) == (c == &truth))
    }
}
