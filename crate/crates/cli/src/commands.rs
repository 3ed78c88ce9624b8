use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use balm_core::encoder::{mlm_pretrain, EncoderConfig, EncoderParams, MlmConfig};
use balm_core::eval::{
    bleu, export_history_with_comments, perplexity_equivalent, random_guess_bound, reconstruction_report, TextAutoencoder,
    TextTranslator,
};
use balm_core::numerics::AdamConfig;
use balm_core::params::derive_seed;
use balm_core::synthetic::{generate, CipherSpec};
use balm_core::text::{build_vocab as make_vocab, load_parallel_corpus, read_sentences, Vocab};
use balm_core::translator::{
    autoencode, autoencoder_corpus_loss, holdout, load_checkpoint, save_checkpoint, train_autoencoder as fit_autoencoder,
    train_translator as fit_translator, translate as translate_text, translate_ids, translator_corpus_loss, reconstruct,
    Checkpoint, DecoderInit, Model, TrainConfig,
};
use balm_core::{ModelError, TrainHistory};

use crate::config::{Defaults, RunConfig};
use crate::{AutoencoderArgs, BuildVocabArgs, EvaluateArgs, MakeSyntheticArgs, PretrainArgs, TranslateArgs, TranslatorArgs};

const ENCODER_INIT_STREAM: u64 = 7;

/// An error with its process exit code: 2 for bad usage or input, 1 for a
/// failure while running.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

type Outcome<T = ()> = Result<T, Failure>;

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

fn runtime(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: error.into() }
}

fn model_failure(e: ModelError) -> Failure {
    match e {
        ModelError::NonFinite { .. } | ModelError::Numerics(_) | ModelError::Eval(_) => runtime(e),
        _ => usage(e),
    }
}

trait OrFail<T> {
    fn or_usage(self) -> Outcome<T>;
    fn or_runtime(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for Result<T, E> {
    fn or_usage(self) -> Outcome<T> {
        self.map_err(usage)
    }

    fn or_runtime(self) -> Outcome<T> {
        self.map_err(runtime)
    }
}

fn write_lines(path: &Path, lines: &[String]) -> Outcome {
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .or_runtime()
}

pub fn make_synthetic(a: &MakeSyntheticArgs) -> Outcome {
    let spec: CipherSpec = a.cipher.parse().or_usage()?;
    let corpus = generate(a.vocab_size, a.n_sentences, a.seed, spec).or_usage()?;
    write_lines(&a.src, &corpus.source)?;
    write_lines(&a.tgt, &corpus.target)?;
    println!("wrote {} sentence pairs ({spec} cipher)", corpus.source.len());
    Ok(())
}

fn read_corpus(path: &Path) -> Outcome<Vec<String>> {
    read_sentences(path).or_usage()
}

pub fn build_vocab(a: &BuildVocabArgs) -> Outcome {
    let sentences = read_corpus(&a.src)?;
    let vocab = make_vocab(&sentences, a.min_freq, a.max_vocab).or_usage()?;
    vocab.save(&a.out).or_runtime()?;
    println!("vocabulary size: {}", vocab.len());
    Ok(())
}

fn load_vocab(path: &Path) -> Outcome<Vocab> {
    Vocab::load(path).or_usage()
}

/// The absolute path recorded in checkpoint metadata.
fn vocab_ref(path: &Path) -> Outcome<String> {
    let abs = fs::canonicalize(path)
        .with_context(|| format!("cannot resolve {}", path.display()))
        .or_usage()?;
    Ok(abs.to_string_lossy().into_owned())
}

/// `flag` if given, else the vocabulary path stored under `key`.
fn vocab_for(flag: Option<&Path>, meta: &BTreeMap<String, String>, key: &str, ckpt: &Path, hint: &str) -> Outcome<(Vocab, String)> {
    let path = match (flag, meta.get(key)) {
        (Some(p), _) => p.to_owned(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => {
            return Err(usage(anyhow!("{} records no {key}; pass {hint}", ckpt.display())));
        }
    };
    let vocab = load_vocab(&path)?;
    Ok((vocab, vocab_ref(&path)?))
}

fn check_vocab(vocab: &Vocab, size: usize, what: &str) -> Outcome {
    if vocab.len() != size {
        return Err(usage(anyhow!(
            "vocabulary has {} tokens but the {what} expects {size}",
            vocab.len()
        )));
    }
    Ok(())
}

fn load(path: &Path, what: &str) -> Outcome<Checkpoint> {
    load_checkpoint(path)
        .with_context(|| format!("cannot load {what} checkpoint {}", path.display()))
        .or_usage()
}

fn save(ckpt: &Checkpoint, path: &Path) -> Outcome {
    save_checkpoint(ckpt, path).or_runtime()
}

fn history_path(explicit: &Option<PathBuf>, out: &Path) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.history.csv", out.display())))
}

fn write_history(history: &TrainHistory, command: &str, cfg: &RunConfig, extra: &[String], path: &Path) -> Outcome {
    let mut comments = vec![format!("command={command}")];
    comments.extend(cfg.lines());
    comments.extend(extra.iter().cloned());
    export_history_with_comments(history, &comments, path).or_runtime()
}

fn print_final(history: &TrainHistory) {
    if let Some(r) = history.last() {
        match r.val_loss {
            Some(v) => println!("final train loss {:.6}, validation loss {:.6}", r.train_loss, v),
            None => println!("final train loss {:.6}", r.train_loss),
        }
    }
}

fn encode_all(vocab: &Vocab, sentences: &[String]) -> Vec<Vec<u32>> {
    sentences.iter().map(|s| vocab.encode_sentence(s)).collect()
}

fn strip_markers(ids: &[u32]) -> Vec<u32> {
    ids[1..ids.len() - 1].to_vec()
}

fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        max_len: cfg.max_len,
        adam: AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        encoder_lr_scale: cfg.encoder_lr_scale,
        decoder_lr_scale: cfg.fine_tune_scale,
        record_timing: cfg.record_timing,
        ..TrainConfig::default()
    }
}

/// Adopts the dimensions of a loaded encoder so the echoed config is
/// truthful, and caps `max_len` at its position table.
fn adopt_encoder(cfg: &mut RunConfig, c: &EncoderConfig) {
    cfg.k = c.embed_dim;
    cfg.layers = c.num_layers;
    cfg.heads = c.num_heads;
    cfg.ffn_hidden = c.ffn_hidden;
    cfg.dropout = c.dropout;
    cfg.max_len = cfg.max_len.min(c.max_positions);
}

fn fresh_encoder(cfg: &RunConfig, vocab_size: usize) -> Outcome<EncoderParams<f32>> {
    let config = EncoderConfig {
        vocab_size,
        embed_dim: cfg.k,
        num_layers: cfg.layers,
        num_heads: cfg.heads,
        ffn_hidden: cfg.ffn_hidden,
        max_positions: cfg.max_len,
        dropout: cfg.dropout,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, ENCODER_INIT_STREAM, 0));
    EncoderParams::init(config, &mut rng).map_err(model_failure)
}

pub fn pretrain_encoder(a: &PretrainArgs) -> Outcome {
    let cfg = RunConfig::resolve(&a.train, Defaults { epochs: 30, lr: 1e-3 }).or_usage()?;
    let sentences = read_corpus(&a.src)?;
    let vocab = load_vocab(&a.vocab)?;
    let encoder = fresh_encoder(&cfg, vocab.len())?;
    let ids = encode_all(&vocab, &sentences);
    let (train, valid) = holdout(&ids, cfg.val_fraction, cfg.seed);
    let mlm = MlmConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        max_len: cfg.max_len,
        mask_prob: cfg.mask_prob,
        adam: AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        clip_norm: Some(1.0),
        record_timing: cfg.record_timing,
    };
    let (encoder, history) = mlm_pretrain(encoder, &train, &valid, &mlm, cfg.seed).map_err(model_failure)?;
    let ckpt = Checkpoint::new(Model::Encoder(encoder)).with_meta("vocab", &vocab_ref(&a.vocab)?);
    save(&ckpt, &a.out)?;
    write_history(&history, "pretrain-encoder", &cfg, &[], &history_path(&a.history, &a.out))?;
    print_final(&history);
    Ok(())
}

pub fn train_autoencoder(a: &AutoencoderArgs) -> Outcome {
    let mut cfg = RunConfig::resolve(&a.train, Defaults { epochs: 100, lr: 3e-3 }).or_usage()?;
    let sentences = read_corpus(&a.src)?;
    let (encoder, vocab, vocab_path) = match &a.encoder {
        Some(path) => {
            let ckpt = load(path, "encoder")?;
            let (vocab, vocab_path) = vocab_for(a.vocab.as_deref(), &ckpt.meta, "vocab", path, "--vocab")?;
            let encoder = ckpt.into_encoder().or_usage()?;
            adopt_encoder(&mut cfg, &encoder.config);
            (encoder, vocab, vocab_path)
        }
        None => {
            let path = a
                .vocab
                .as_deref()
                .ok_or_else(|| usage(anyhow!("train-autoencoder needs --vocab when no --encoder is given")))?;
            let vocab = load_vocab(path)?;
            (fresh_encoder(&cfg, vocab.len())?, vocab, vocab_ref(path)?)
        }
    };
    check_vocab(&vocab, encoder.config.vocab_size, "encoder")?;
    let ids = encode_all(&vocab, &sentences);
    let (train, valid) = holdout(&ids, cfg.val_fraction, cfg.seed);
    let (model, history) = fit_autoencoder(encoder, &train, &valid, &train_config(&cfg), cfg.seed).map_err(model_failure)?;
    save(&Checkpoint::new(Model::Autoencoder(model.clone())).with_meta("vocab", &vocab_path), &a.out)?;
    write_history(&history, "train-autoencoder", &cfg, &[], &history_path(&a.history, &a.out))?;
    print_final(&history);
    if !valid.is_empty() {
        let out = autoencode(&model, &valid, cfg.max_len).map_err(model_failure)?;
        let refs: Vec<Vec<u32>> = valid.iter().map(|v| strip_markers(v)).collect();
        let score = bleu(&out, &refs, 4).or_runtime()?.score;
        println!("validation BLEU {score:.4}");
    }
    Ok(())
}

pub fn train_translator(a: &TranslatorArgs) -> Outcome {
    let mut cfg = RunConfig::resolve(&a.train, Defaults { epochs: 150, lr: 3e-3 }).or_usage()?;
    let src_path = a
        .src_encoder
        .as_deref()
        .ok_or_else(|| usage(anyhow!("train-translator needs --src-encoder <checkpoint> for the source language")))?;
    let (decoder_ckpt, ae_path) = match (&a.autoencoder, a.fresh_decoder) {
        (Some(p), false) => (Some(load(p, "autoencoder")?), p.as_path()),
        (None, false) => {
            return Err(usage(anyhow!(
                "train-translator needs --autoencoder <checkpoint>: the target decoder is transferred from a trained autoencoder (or pass --fresh-decoder)"
            )));
        }
        (_, true) => (None, Path::new("")),
    };
    if a.fresh_decoder && a.freeze_decoder {
        return Err(usage(anyhow!("--freeze-decoder cannot be combined with --fresh-decoder")));
    }

    let src_ckpt = load(src_path, "source encoder")?;
    let (src_vocab, src_vocab_path) = vocab_for(a.src_vocab.as_deref(), &src_ckpt.meta, "vocab", src_path, "--src-vocab")?;
    let src_encoder = match src_ckpt.model {
        Model::Encoder(e) => e,
        Model::Autoencoder(m) => m.encoder,
        Model::Translator(_) => {
            return Err(usage(anyhow!("{} is a translator checkpoint, not an encoder", src_path.display())));
        }
    };
    check_vocab(&src_vocab, src_encoder.config.vocab_size, "source encoder")?;
    adopt_encoder(&mut cfg, &src_encoder.config);

    let (init, tgt_vocab, tgt_vocab_path) = match decoder_ckpt {
        Some(ckpt) => {
            let (vocab, path) = vocab_for(a.tgt_vocab.as_deref(), &ckpt.meta, "vocab", ae_path, "--tgt-vocab")?;
            let ae = ckpt.into_autoencoder().or_usage()?;
            (DecoderInit::Transfer(ae.decoder), vocab, path)
        }
        None => {
            let path = a
                .tgt_vocab
                .as_deref()
                .ok_or_else(|| usage(anyhow!("--fresh-decoder needs --tgt-vocab")))?;
            let vocab = load_vocab(path)?;
            let config = balm_core::decoder::DecoderConfig {
                vocab_size: vocab.len(),
                embed_dim: src_encoder.embed_dim(),
            };
            (DecoderInit::Fresh(config), vocab, vocab_ref(path)?)
        }
    };
    if let DecoderInit::Transfer(d) = &init {
        check_vocab(&tgt_vocab, d.config.vocab_size, "transferred decoder")?;
    }

    let corpus = load_parallel_corpus(&a.src, &a.tgt).or_usage()?;
    let pairs: Vec<(Vec<u32>, Vec<u32>)> = corpus
        .pairs
        .iter()
        .map(|(s, t)| (src_vocab.encode_sentence(s), tgt_vocab.encode_sentence(t)))
        .collect();
    let (train, valid) = holdout(&pairs, cfg.val_fraction, cfg.seed);
    let mut tc = train_config(&cfg);
    tc.freeze_decoder = a.freeze_decoder;
    let (model, history) = fit_translator(src_encoder, init, &train, &valid, &tc, cfg.seed).map_err(model_failure)?;
    let ckpt = Checkpoint::new(Model::Translator(model.clone()))
        .with_meta("src_vocab", &src_vocab_path)
        .with_meta("tgt_vocab", &tgt_vocab_path);
    save(&ckpt, &a.out)?;
    let extra = [
        format!("decoder={}", if a.fresh_decoder { "fresh" } else { "transferred" }),
        format!("freeze_decoder={}", a.freeze_decoder),
    ];
    write_history(&history, "train-translator", &cfg, &extra, &history_path(&a.history, &a.out))?;
    print_final(&history);
    if !valid.is_empty() {
        let src: Vec<Vec<u32>> = valid.iter().map(|p| p.0.clone()).collect();
        let refs: Vec<Vec<u32>> = valid.iter().map(|p| strip_markers(&p.1)).collect();
        let out = translate_ids(&model, &src, cfg.max_len).map_err(model_failure)?;
        let score = bleu(&out, &refs, 4).or_runtime()?.score;
        println!("validation BLEU {score:.4}");
    }
    Ok(())
}

fn print_scores(bleu_score: f64, mean_loss: Option<f64>, vocab_size: usize) -> Outcome {
    println!("corpus BLEU {bleu_score:.4}");
    if let Some(loss) = mean_loss {
        println!("mean cross-entropy {loss:.6}");
        println!("perplexity equivalent {:.6}", perplexity_equivalent(loss));
    }
    let bound = random_guess_bound(vocab_size).or_usage()?;
    println!("random-guess bound (V={vocab_size}) {bound:.4}");
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Outcome {
    if a.batch_size == 0 || a.max_len < 2 {
        return Err(usage(anyhow!("--batch-size must be positive and --max-len at least 2")));
    }
    let ckpt = load(&a.checkpoint, "model")?;
    let inputs = read_corpus(&a.src)?;
    let references = match &a.tgt {
        Some(p) => read_corpus(p)?,
        None => inputs.clone(),
    };
    if references.len() != inputs.len() {
        return Err(usage(anyhow!(
            "{} input sentences but {} references",
            inputs.len(),
            references.len()
        )));
    }
    match ckpt.model {
        Model::Autoencoder(ref model) => {
            let (vocab, _) = vocab_for(a.vocab.as_deref(), &ckpt.meta, "vocab", &a.checkpoint, "--vocab")?;
            check_vocab(&vocab, model.decoder.config.vocab_size, "autoencoder")?;
            let runner = TextAutoencoder {
                model,
                vocab: &vocab,
                max_len: a.max_len,
            };
            let report = reconstruction_report(&runner, &inputs, &references, &a.out).map_err(model_failure)?;
            let ids = encode_all(&vocab, &inputs);
            let loss = autoencoder_corpus_loss(model, &ids, a.batch_size, model.encoder.config.max_positions).map_err(model_failure)?;
            print_scores(report.corpus.score, loss, vocab.len())
        }
        Model::Translator(ref model) => {
            if a.tgt.is_none() {
                return Err(usage(anyhow!("evaluating a translator needs --tgt references")));
            }
            let (src_vocab, _) = vocab_for(a.src_vocab.as_deref(), &ckpt.meta, "src_vocab", &a.checkpoint, "--src-vocab")?;
            let (tgt_vocab, _) = vocab_for(a.tgt_vocab.as_deref(), &ckpt.meta, "tgt_vocab", &a.checkpoint, "--tgt-vocab")?;
            check_vocab(&src_vocab, model.src_encoder.config.vocab_size, "source encoder")?;
            check_vocab(&tgt_vocab, model.tgt_decoder.config.vocab_size, "target decoder")?;
            let runner = TextTranslator {
                model,
                src_vocab: &src_vocab,
                tgt_vocab: &tgt_vocab,
                max_len: a.max_len,
            };
            let report = reconstruction_report(&runner, &inputs, &references, &a.out).map_err(model_failure)?;
            let src = encode_all(&src_vocab, &inputs);
            let tgt = encode_all(&tgt_vocab, &references);
            let loss = translator_corpus_loss(model, &src, &tgt, a.batch_size, model.src_encoder.config.max_positions)
                .map_err(model_failure)?;
            print_scores(report.corpus.score, loss, tgt_vocab.len())
        }
        Model::Encoder(_) => Err(usage(anyhow!(
            "{} holds only an encoder; evaluate an autoencoder or translator checkpoint",
            a.checkpoint.display()
        ))),
    }
}

pub fn translate(a: &TranslateArgs) -> Outcome {
    if a.max_len < 2 {
        return Err(usage(anyhow!("--max-len must be at least 2")));
    }
    let ckpt = load(&a.checkpoint, "model")?;
    let line = match ckpt.model {
        Model::Translator(ref model) => {
            let (src_vocab, _) = vocab_for(a.src_vocab.as_deref(), &ckpt.meta, "src_vocab", &a.checkpoint, "--src-vocab")?;
            let (tgt_vocab, _) = vocab_for(a.tgt_vocab.as_deref(), &ckpt.meta, "tgt_vocab", &a.checkpoint, "--tgt-vocab")?;
            translate_text(model, &a.sentence, &src_vocab, &tgt_vocab, a.max_len).map_err(model_failure)?
        }
        Model::Autoencoder(ref model) => {
            let (vocab, _) = vocab_for(a.vocab.as_deref(), &ckpt.meta, "vocab", &a.checkpoint, "--vocab")?;
            reconstruct(model, &a.sentence, &vocab, a.max_len).map_err(model_failure)?
        }
        Model::Encoder(_) => {
            return Err(usage(anyhow!("{} holds only an encoder and cannot translate", a.checkpoint.display())));
        }
    };
    println!("{line}");
    Ok(())
}

