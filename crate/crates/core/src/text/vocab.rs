use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{tokenize, TextError};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const MASK: u32 = 4;
pub const CLS: u32 = 5;
pub const SEP: u32 = 6;
pub const NUM_RESERVED: usize = 7;

pub const RESERVED_TOKENS: [&str; NUM_RESERVED] =
    ["<pad>", "<unk>", "<bos>", "<eos>", "<mask>", "<cls>", "<sep>"];

/// Bidirectional token/id map. Ids `0..7` are the reserved tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from the non-reserved tokens, in id order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.into_iter().map(Into::into));
        Self::from_full_list(all)
    }

    fn from_full_list(tokens: Vec<String>) -> Result<Self, TextError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if i < NUM_RESERVED && tok != RESERVED_TOKENS[i] {
                return Err(TextError::VocabParams(format!(
                    "id {i} must be {}, found {tok:?}",
                    RESERVED_TOKENS[i]
                )));
            }
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(TextError::VocabParams(format!("invalid token {tok:?} at id {i}")));
            }
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(TextError::VocabParams(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_RESERVED
    }

    /// Maps tokens to ids, unknown tokens to UNK; optionally wraps the
    /// sequence in BOS/EOS.
    pub fn encode_ids<S: AsRef<str>>(&self, tokens: &[S], add_bos_eos: bool) -> Vec<u32> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        if add_bos_eos {
            ids.push(BOS);
        }
        ids.extend(tokens.iter().map(|t| self.id(t.as_ref()).unwrap_or(UNK)));
        if add_bos_eos {
            ids.push(EOS);
        }
        ids
    }

    /// Tokenizes raw text and encodes it with BOS/EOS.
    pub fn encode_sentence(&self, text: &str) -> Vec<u32> {
        self.encode_ids(&tokenize(text), true)
    }

    /// Maps ids back to tokens, dropping reserved ids.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| !Self::is_special(id))
            .filter_map(|&id| self.token(id).map(str::to_owned))
            .collect()
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        fs::write(path, out).map_err(|source| TextError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        let bytes = fs::read(path).map_err(|source| TextError::Io {
            path: path.to_owned(),
            source,
        })?;
        let text = String::from_utf8(bytes).map_err(|e| {
            let line = e.as_bytes()[..e.utf8_error().valid_up_to()]
                .iter()
                .filter(|&&b| b == b'\n')
                .count();
            TextError::Encoding {
                path: path.to_owned(),
                line: line + 1,
            }
        })?;
        let tokens: Vec<String> = text
            .lines()
            .map(|l| l.trim_end_matches('\r').to_owned())
            .collect();
        Self::from_full_list(tokens).map_err(|e| TextError::VocabFile {
            path: path.to_owned(),
            line: 0,
            message: e.to_string(),
        })
    }
}

/// Reserved tokens first, then every token seen at least `min_freq` times
/// ordered by descending frequency with lexicographic tie-break, truncated so
/// the whole vocabulary has at most `max_size` entries.
pub fn build_vocab<S: AsRef<str>>(sentences: &[S], min_freq: usize, max_size: usize) -> Result<Vocab, TextError> {
    if min_freq < 1 || max_size <= NUM_RESERVED {
        return Err(TextError::VocabParams(format!(
            "min_freq must be >= 1 and max_size > {NUM_RESERVED} (got {min_freq}, {max_size})"
        )));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in sentences {
        for tok in tokenize(s.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(TextError::EmptyVocab);
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(tok, n)| *n >= min_freq && !RESERVED_TOKENS.contains(&tok.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - NUM_RESERVED);
    Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t))
}
