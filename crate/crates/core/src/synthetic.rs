//! Synthetic parallel corpora: template subject-verb-object sentences and a
//! cipher language derived from them by token substitution, optionally with
//! adjective-noun pairs swapped.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::params::derive_seed;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SyntheticError {
    #[error("vocab_size must be at least 10, got {0}")]
    VocabTooSmall(usize),
    #[error("n_sentences must be at least 1")]
    NoSentences,
    #[error("invalid cipher spec {0:?}: expected identity or substitution, optionally followed by +swap")]
    Spec(String),
    #[error("only {found} distinct sentences could be generated, {wanted} requested")]
    Exhausted { wanted: usize, found: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CipherKind {
    Identity,
    Substitution,
}

/// How the target language is derived from the source language.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CipherSpec {
    pub kind: CipherKind,
    /// Swap every adjacent adjective-noun pair to noun-adjective.
    pub swap: bool,
}

impl FromStr for CipherSpec {
    type Err = SyntheticError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (base, swap) = match s.strip_suffix("+swap") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let kind = match base {
            "identity" => CipherKind::Identity,
            "substitution" => CipherKind::Substitution,
            _ => return Err(SyntheticError::Spec(s.to_owned())),
        };
        Ok(Self { kind, swap })
    }
}

impl fmt::Display for CipherSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.kind {
            CipherKind::Identity => "identity",
            CipherKind::Substitution => "substitution",
        };
        write!(f, "{base}{}", if self.swap { "+swap" } else { "" })
    }
}

const DETS: &[&str] = &["the", "a", "every", "some"];
const ADJS: &[&str] = &[
    "big", "small", "red", "blue", "green", "old", "young", "happy", "sad", "quick", "slow", "brown", "white",
    "black", "tall", "short", "loud", "quiet", "brave", "shy", "lazy", "clever", "wild", "tiny", "fat", "thin",
    "hungry", "sleepy", "angry", "calm",
];
const NOUNS: &[&str] = &[
    "dog", "cat", "bird", "horse", "cow", "fox", "mouse", "rabbit", "duck", "goat", "sheep", "pig", "lion",
    "tiger", "bear", "wolf", "frog", "owl", "man", "woman", "boy", "girl", "child", "farmer", "teacher", "doctor",
    "ball", "tree", "house", "car", "boat", "river", "hill", "field", "garden", "road", "apple", "bone", "hat",
    "box", "chair", "table", "door", "window", "bridge", "park", "lake", "rock",
];
const VERBS_T: &[&str] = &[
    "sees", "chases", "likes", "finds", "watches", "follows", "holds", "pulls", "pushes", "carries", "eats",
    "kicks", "helps", "feeds", "meets", "loves", "hears", "bites", "catches", "throws", "paints", "visits",
    "calls", "wants", "takes",
];
const VERBS_I: &[&str] = &[
    "runs", "sleeps", "jumps", "sits", "walks", "swims", "sings", "waits", "plays", "laughs", "falls", "barks",
    "flies", "rests", "dances",
];
const PREPS: &[&str] = &["near", "under", "behind", "beside", "above", "with", "across", "into", "past", "toward"];
const STOP: &str = ".";

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Det,
    Adj,
    Noun,
    VerbT,
    VerbI,
    Prep,
    Stop,
}

use Slot::*;

/// Sentence shapes, 3 to 10 tokens including the full stop.
const TEMPLATES: &[&[Slot]] = &[
    &[Noun, VerbI, Stop],
    &[Det, Noun, VerbI, Stop],
    &[Det, Adj, Noun, VerbI, Stop],
    &[Det, Noun, VerbT, Det, Noun, Stop],
    &[Det, Adj, Noun, VerbT, Det, Noun, Stop],
    &[Det, Noun, VerbT, Det, Adj, Noun, Stop],
    &[Det, Noun, VerbI, Prep, Det, Noun, Stop],
    &[Det, Adj, Noun, VerbT, Det, Adj, Noun, Stop],
    &[Det, Adj, Noun, VerbI, Prep, Det, Adj, Noun, Stop],
    &[Det, Adj, Noun, VerbT, Det, Noun, Prep, Det, Noun, Stop],
];

/// Word lists per grammatical category.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grammar {
    pub dets: Vec<String>,
    pub adjs: Vec<String>,
    pub nouns: Vec<String>,
    pub verbs_t: Vec<String>,
    pub verbs_i: Vec<String>,
    pub preps: Vec<String>,
}

fn pseudo_word(rng: &mut impl Rng) -> String {
    let syllables = rng.random_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(*CONSONANTS.choose(rng).expect("non-empty") as char);
        w.push(*VOWELS.choose(rng).expect("non-empty") as char);
    }
    w
}

/// Draws `n` fresh pseudo-words not present in `taken`.
fn fresh_words(n: usize, taken: &mut HashSet<String>, rng: &mut impl Rng) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = pseudo_word(rng);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

impl Grammar {
    /// A grammar with `vocab_size` distinct tokens (the full stop included).
    /// Built-in words are used first; pseudo-words fill any remainder.
    pub fn with_vocab_size(vocab_size: usize, seed: u64) -> Result<Self, SyntheticError> {
        if vocab_size < 10 {
            return Err(SyntheticError::VocabTooSmall(vocab_size));
        }
        let n = vocab_size - 1;
        let dets = (n / 12).clamp(1, DETS.len());
        let preps = (n * 8 / 100).max(1);
        let verbs_t = (n * 20 / 100).max(1);
        let verbs_i = (n * 12 / 100).max(1);
        let adjs = (n * 25 / 100).max(1);
        let nouns = n - dets - preps - verbs_t - verbs_i - adjs;

        let mut taken: HashSet<String> = [DETS, ADJS, NOUNS, VERBS_T, VERBS_I, PREPS]
            .iter()
            .flat_map(|l| l.iter().map(|w| w.to_string()))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 10, 0));
        let mut pick = |list: &[&str], n: usize| {
            let mut words: Vec<String> = list.iter().take(n).map(|w| w.to_string()).collect();
            let extra = n.saturating_sub(words.len());
            words.extend(fresh_words(extra, &mut taken, &mut rng));
            words
        };
        Ok(Self {
            dets: pick(DETS, dets),
            adjs: pick(ADJS, adjs),
            nouns: pick(NOUNS, nouns),
            verbs_t: pick(VERBS_T, verbs_t),
            verbs_i: pick(VERBS_I, verbs_i),
            preps: pick(PREPS, preps),
        })
    }

    /// Every token the grammar can emit, full stop last.
    pub fn words(&self) -> Vec<&str> {
        let mut out: Vec<&str> = [&self.dets, &self.adjs, &self.nouns, &self.verbs_t, &self.verbs_i, &self.preps]
            .iter()
            .flat_map(|l| l.iter().map(String::as_str))
            .collect();
        out.push(STOP);
        out
    }

    fn list(&self, slot: Slot) -> &[String] {
        match slot {
            Det => &self.dets,
            Adj => &self.adjs,
            Noun => &self.nouns,
            VerbT => &self.verbs_t,
            VerbI => &self.verbs_i,
            Prep => &self.preps,
            Stop => unreachable!("the full stop is not a word list"),
        }
    }

    fn sentence(&self, rng: &mut impl Rng) -> Vec<&str> {
        let template = TEMPLATES.choose(rng).expect("non-empty");
        template
            .iter()
            .map(|&slot| match slot {
                Stop => STOP,
                s => self.list(s).choose(rng).expect("non-empty list").as_str(),
            })
            .collect()
    }
}

/// A bijective token map from the source language to the target language.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cipher {
    spec: CipherSpec,
    forward: HashMap<String, String>,
    inverse: HashMap<String, String>,
    adjs: HashSet<String>,
    nouns: HashSet<String>,
}

impl Cipher {
    pub fn new(grammar: &Grammar, spec: CipherSpec, seed: u64) -> Self {
        let words = grammar.words();
        let forward: HashMap<String, String> = match spec.kind {
            CipherKind::Identity => words.iter().map(|w| (w.to_string(), w.to_string())).collect(),
            CipherKind::Substitution => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 11, 0));
                let mut taken: HashSet<String> = words.iter().map(|w| w.to_string()).collect();
                let content = &words[..words.len() - 1];
                let mut images = fresh_words(content.len(), &mut taken, &mut rng);
                images.shuffle(&mut rng);
                let mut map: HashMap<String, String> =
                    content.iter().map(|w| w.to_string()).zip(images).collect();
                map.insert(STOP.to_owned(), STOP.to_owned());
                map
            }
        };
        let inverse = forward.iter().map(|(k, v)| (v.clone(), k.clone())).collect();
        Self {
            spec,
            forward,
            inverse,
            adjs: grammar.adjs.iter().cloned().collect(),
            nouns: grammar.nouns.iter().cloned().collect(),
        }
    }

    pub fn spec(&self) -> CipherSpec {
        self.spec
    }

    /// Source tokens to target tokens. Unknown tokens pass through.
    pub fn encipher_tokens(&self, tokens: &[&str]) -> Vec<String> {
        let mut src: Vec<&str> = tokens.to_vec();
        if self.spec.swap {
            let mut i = 0;
            while i + 1 < src.len() {
                if self.adjs.contains(src[i]) && self.nouns.contains(src[i + 1]) {
                    src.swap(i, i + 1);
                    i += 2;
                } else {
                    i += 1;
                }
            }
        }
        src.iter()
            .map(|t| self.forward.get(*t).cloned().unwrap_or_else(|| t.to_string()))
            .collect()
    }

    /// Target tokens back to source tokens.
    pub fn decipher_tokens(&self, tokens: &[&str]) -> Vec<String> {
        let mut out: Vec<String> = tokens
            .iter()
            .map(|t| self.inverse.get(*t).cloned().unwrap_or_else(|| t.to_string()))
            .collect();
        if self.spec.swap {
            let mut i = 0;
            while i + 1 < out.len() {
                if self.nouns.contains(&out[i]) && self.adjs.contains(&out[i + 1]) {
                    out.swap(i, i + 1);
                    i += 2;
                } else {
                    i += 1;
                }
            }
        }
        out
    }

    pub fn encipher(&self, sentence: &str) -> String {
        let tokens: Vec<&str> = sentence.split_whitespace().collect();
        self.encipher_tokens(&tokens).join(" ")
    }

    pub fn decipher(&self, sentence: &str) -> String {
        let tokens: Vec<&str> = sentence.split_whitespace().collect();
        self.decipher_tokens(&tokens).join(" ")
    }
}

/// Line-aligned source and target sentences, tokens separated by spaces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticCorpus {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub cipher: Cipher,
    pub grammar: Grammar,
}

/// Generates `n_sentences` distinct template sentences over a grammar of
/// `vocab_size` tokens and their enciphered translations.
pub fn generate(vocab_size: usize, n_sentences: usize, seed: u64, spec: CipherSpec) -> Result<SyntheticCorpus, SyntheticError> {
    if n_sentences == 0 {
        return Err(SyntheticError::NoSentences);
    }
    let grammar = Grammar::with_vocab_size(vocab_size, seed)?;
    let cipher = Cipher::new(&grammar, spec, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 12, 0));
    let mut seen = HashSet::new();
    let mut source = Vec::with_capacity(n_sentences);
    let budget = 200 * n_sentences + 10_000;
    for _ in 0..budget {
        if source.len() == n_sentences {
            break;
        }
        let s = grammar.sentence(&mut rng).join(" ");
        if seen.insert(s.clone()) {
            source.push(s);
        }
    }
    if source.len() < n_sentences {
        return Err(SyntheticError::Exhausted {
            wanted: n_sentences,
            found: source.len(),
        });
    }
    let target = source.iter().map(|s| cipher.encipher(s)).collect();
    Ok(SyntheticCorpus {
        source,
        target,
        cipher,
        grammar,
    })
}
