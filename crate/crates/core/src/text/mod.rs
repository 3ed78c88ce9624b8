//! Tokenization, vocabularies, parallel-corpus loading and padded batching.

mod batch;
mod corpus;
mod tokenize;
mod vocab;

pub use batch::{assemble_batch, batch_order, make_batches, TokenBatch};
pub use corpus::{load_parallel_corpus, read_sentences, split_indices, ParallelCorpus, Split};
pub use tokenize::{detokenize, is_punctuation, tokenize, TOKENIZER_VERSION};
pub use vocab::{
    build_vocab, Vocab, BOS, CLS, EOS, MASK, NUM_RESERVED, PAD, RESERVED_TOKENS, SEP, UNK,
};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyVocab,
    #[error("invalid vocabulary parameters: {0}")]
    VocabParams(String),
    #[error("{path}: line {line}: {message}")]
    VocabFile {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("corpus files are not aligned: {source_lines} source lines vs {target_lines} target lines")]
    Alignment {
        source_lines: usize,
        target_lines: usize,
    },
    #[error("{path}: line {line} is not valid UTF-8")]
    Encoding { path: PathBuf, line: usize },
    #[error("{path}: line {line} is empty")]
    EmptyLine { path: PathBuf, line: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid batching parameters: {0}")]
    BatchParams(String),
}
