//! BLEU scoring, cross-entropy diagnostics, learning-curve export and
//! reconstruction reports.

mod bleu;

pub use bleu::{bleu, sentence_bleu_smoothed, BleuReport};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::error::Result;
use crate::history::TrainHistory;
use crate::text::{detokenize, tokenize, Vocab};
use crate::translator::{autoencode, encode_text, translate_ids, AutoencoderModel, TranslatorModel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{candidates} candidates but {references} references")]
    Length { candidates: usize, references: usize },
    #[error("reference {index} is empty")]
    EmptyReference { index: usize },
    #[error("BLEU order must be at least 1")]
    Order,
    #[error("vocabulary size must be at least 1")]
    VocabSize,
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// `ln V`: the expected cross-entropy of guessing uniformly over `V` tokens.
pub fn random_guess_bound(vocab_size: usize) -> Result<f64, EvalError> {
    if vocab_size < 1 {
        return Err(EvalError::VocabSize);
    }
    Ok((vocab_size as f64).ln())
}

/// `exp(-loss)`: the per-token probability of the correct class implied by a
/// mean cross-entropy.
pub fn perplexity_equivalent(mean_loss: f64) -> f64 {
    (-mean_loss).exp()
}

/// Rounds to six significant digits and prints the shortest exact form.
pub fn six_significant(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    rounded.to_string()
}

fn write_file(path: &Path, text: &str) -> Result<(), EvalError> {
    fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.to_owned(),
        source,
    })
}

/// The learning-curve CSV text. Each `comments` entry becomes a leading
/// `# ` line.
pub fn history_csv(history: &TrainHistory, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        for line in c.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    out.push_str("epoch,train_loss,val_loss,seconds\n");
    for r in &history.records {
        let val = r.val_loss.map(six_significant).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.epoch,
            six_significant(r.train_loss),
            val,
            six_significant(r.seconds)
        );
    }
    out
}

/// Writes `epoch,train_loss,val_loss,seconds` rows with six significant
/// digits. A missing validation loss is an empty field.
pub fn export_history(history: &TrainHistory, path: &Path) -> Result<(), EvalError> {
    write_file(path, &history_csv(history, &[]))
}

/// As [`export_history`], preceded by `# ` comment lines.
pub fn export_history_with_comments(history: &TrainHistory, comments: &[String], path: &Path) -> Result<(), EvalError> {
    write_file(path, &history_csv(history, comments))
}

/// Anything that maps a batch of sentences to output sentences.
pub trait SentenceModel {
    fn run(&self, sentences: &[String]) -> Result<Vec<String>>;
}

/// An autoencoder with its vocabulary, reconstructing raw text.
pub struct TextAutoencoder<'a> {
    pub model: &'a AutoencoderModel,
    pub vocab: &'a Vocab,
    pub max_len: usize,
}

impl SentenceModel for TextAutoencoder<'_> {
    fn run(&self, sentences: &[String]) -> Result<Vec<String>> {
        let ids = sentences.iter().map(|s| encode_text(self.vocab, s)).collect::<Result<Vec<_>>>()?;
        let out = autoencode(self.model, &ids, self.max_len)?;
        Ok(out.iter().map(|o| detokenize(&self.vocab.decode(o))).collect())
    }
}

/// A translator with both vocabularies, translating raw text.
pub struct TextTranslator<'a> {
    pub model: &'a TranslatorModel,
    pub src_vocab: &'a Vocab,
    pub tgt_vocab: &'a Vocab,
    pub max_len: usize,
}

impl SentenceModel for TextTranslator<'_> {
    fn run(&self, sentences: &[String]) -> Result<Vec<String>> {
        let ids = sentences.iter().map(|s| encode_text(self.src_vocab, s)).collect::<Result<Vec<_>>>()?;
        let out = translate_ids(self.model, &ids, self.max_len)?;
        Ok(out.iter().map(|o| detokenize(&self.tgt_vocab.decode(o))).collect())
    }
}

/// One row of a reconstruction report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub input: String,
    pub output: String,
    pub reference: String,
    pub bleu: f64,
    pub exact: bool,
}

/// Rows of a report plus corpus BLEU over all of them.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub corpus: BleuReport,
}

impl Report {
    pub fn exact_rate(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.exact).count() as f64 / self.rows.len() as f64
    }

    /// Tab-separated text with a header line.
    pub fn to_tsv(&self) -> String {
        let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
        let mut out = String::from("input\toutput\treference\tbleu\texact\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.4}\t{}",
                clean(&r.input),
                clean(&r.output),
                clean(&r.reference),
                r.bleu,
                r.exact
            );
        }
        out
    }
}

/// Scores model outputs against references on tokenizer output.
pub fn score_outputs(inputs: &[String], outputs: &[String], references: &[String]) -> Result<Report> {
    if outputs.len() != references.len() || inputs.len() != references.len() {
        return Err(EvalError::Length {
            candidates: outputs.len(),
            references: references.len(),
        }
        .into());
    }
    let cand: Vec<Vec<String>> = outputs.iter().map(|s| tokenize(s)).collect();
    let refs: Vec<Vec<String>> = references.iter().map(|s| tokenize(s)).collect();
    let corpus = bleu(&cand, &refs, 4)?;
    let rows = inputs
        .iter()
        .zip(outputs)
        .zip(references)
        .zip(cand.iter().zip(&refs))
        .map(|(((i, o), r), (c, t))| ReportRow {
            input: i.clone(),
            output: o.clone(),
            reference: r.clone(),
            bleu: sentence_bleu_smoothed(c, t, 4),
            exact: c == t,
        })
        .collect();
    Ok(Report { rows, corpus })
}

/// Runs `model` on `sentences`, scores the outputs against `references` and
/// writes the rows as a UTF-8 tab-separated table.
pub fn reconstruction_report(model: &impl SentenceModel, sentences: &[String], references: &[String], path: &Path) -> Result<Report> {
    let outputs = model.run(sentences)?;
    let report = score_outputs(sentences, &outputs, references)?;
    write_file(path, &report.to_tsv())?;
    Ok(report)
}
