//! The thought translator `F`, the composed autoencoder and translator
//! pipelines, their training loops and checkpoint persistence.

mod checkpoint;
mod training;

pub use checkpoint::{
    from_bytes, load_checkpoint, save_checkpoint, to_bytes, Checkpoint, CheckpointError, Model, FORMAT_VERSION,
};
pub use training::{
    autoencoder_corpus_loss, holdout, train_autoencoder, train_translator, translator_corpus_loss, DecoderInit, TrainConfig,
};

use rand::Rng;

use crate::decoder::{greedy_decode_batch, teacher_forced_loss_on_tape, DecoderConfig, DecoderParams, DecoderWeights};
use crate::encoder::{embed_on_tape, EncoderConfig, EncoderParams, EncoderWeights};
use crate::error::{ModelError, Result};
use crate::numerics::{NumericsError, Scalar, Tape, Tensor, Var};
use crate::params::{glorot_uniform, weights};
use crate::text::{assemble_batch, detokenize, tokenize, TokenBatch, Vocab};

weights!(
    /// Two square layers with a ReLU between them.
    pub struct FfnWeights { w1, b1, w2, b2 }
);

#[derive(Clone, Debug, PartialEq)]
pub struct FfnParams<F = f32> {
    pub weights: FfnWeights<Tensor<F>>,
}

impl<F: Scalar> FfnParams<F> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(k: usize, rng: &mut impl Rng) -> Result<Self> {
        if k == 0 {
            return Err(ModelError::Config("translator dimension must be positive".into()));
        }
        Ok(Self {
            weights: FfnWeights {
                w1: glorot_uniform(&[k, k], rng),
                b1: Tensor::zeros(&[k]),
                w2: glorot_uniform(&[k, k], rng),
                b2: Tensor::zeros(&[k]),
            },
        })
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            weights: FfnWeights {
                w1: Tensor::zeros(&[k, k]),
                b1: Tensor::zeros(&[k]),
                w2: Tensor::zeros(&[k, k]),
                b2: Tensor::zeros(&[k]),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.b1.len()
    }

    pub fn bind(&self, tape: &mut Tape<F>) -> FfnWeights<Var> {
        self.weights.map(&mut |t| tape.param(t.clone()))
    }

    pub fn bind_frozen(&self, tape: &mut Tape<F>) -> FfnWeights<Var> {
        self.weights.map(&mut |t| tape.constant(t.clone()))
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        self.weights.visit("", &mut |n, t| out.push((n, t)));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = Vec::new();
        self.weights.visit_mut(&mut |t| out.push(t));
        out
    }

    pub fn cast<G: Scalar>(&self) -> FfnParams<G> {
        FfnParams {
            weights: self.weights.map(&mut |t| t.cast()),
        }
    }
}

/// `relu(x·W1 + b1)·W2 + b2` on `[batch, k]` embeddings.
pub fn translate_thought_on_tape<F: Scalar>(tape: &mut Tape<F>, w: &FfnWeights<Var>, x: Var) -> Result<Var> {
    let h = tape.matmul(x, w.w1)?;
    let h = tape.add_bias(h, w.b1)?;
    let h = tape.relu(h);
    let out = tape.matmul(h, w.w2)?;
    Ok(tape.add_bias(out, w.b2)?)
}

/// Maps source embeddings (`[k]` or `[batch, k]`) into the target space.
pub fn translate_thought<F: Scalar>(ffn: &FfnParams<F>, src: &Tensor<F>) -> Result<Tensor<F>> {
    let k = ffn.dim();
    if src.last_dim() != k {
        return Err(NumericsError::Shape {
            op: "translate_thought",
            lhs: src.shape().to_vec(),
            rhs: vec![k],
        }
        .into());
    }
    let mut tape = Tape::new();
    let w = ffn.bind_frozen(&mut tape);
    let x = tape.constant(src.reshape(&[src.len() / k, k])?);
    let out = translate_thought_on_tape(&mut tape, &w, x)?;
    Ok(tape.value(out).reshape(src.shape())?)
}

fn check_dims(pairs: &[(&str, usize)]) -> Result<()> {
    let (first, k) = pairs[0];
    match pairs.iter().find(|(_, d)| *d != k) {
        Some((name, d)) => Err(ModelError::Config(format!(
            "embedding dimension mismatch: {first} has k={k} but {name} has k={d}"
        ))),
        None => Ok(()),
    }
}

/// `A = B ∘ B⁻¹` for one language.
#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderModel<F = f32> {
    pub encoder: EncoderParams<F>,
    pub decoder: DecoderParams<F>,
}

impl<F: Scalar> AutoencoderModel<F> {
    pub fn new(encoder: EncoderParams<F>, decoder: DecoderParams<F>) -> Result<Self> {
        check_dims(&[("encoder", encoder.embed_dim()), ("decoder", decoder.embed_dim())])?;
        Ok(Self { encoder, decoder })
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        self.encoder.weights.visit("encoder.", &mut |n, t| out.push((n, t)));
        self.decoder.weights.visit("decoder.", &mut |n, t| out.push((n, t)));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = self.encoder.params_mut();
        out.extend(self.decoder.params_mut());
        out
    }

    pub fn cast<G: Scalar>(&self) -> AutoencoderModel<G> {
        AutoencoderModel {
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.decoder.is_finite()
    }
}

/// `T`: source encoder, then `F`, then the target decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslatorModel<F = f32> {
    pub src_encoder: EncoderParams<F>,
    pub ffn: FfnParams<F>,
    pub tgt_decoder: DecoderParams<F>,
}

impl<F: Scalar> TranslatorModel<F> {
    pub fn new(src_encoder: EncoderParams<F>, ffn: FfnParams<F>, tgt_decoder: DecoderParams<F>) -> Result<Self> {
        check_dims(&[
            ("source encoder", src_encoder.embed_dim()),
            ("translator", ffn.dim()),
            ("target decoder", tgt_decoder.embed_dim()),
        ])?;
        Ok(Self {
            src_encoder,
            ffn,
            tgt_decoder,
        })
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        self.src_encoder.weights.visit("encoder.", &mut |n, t| out.push((n, t)));
        self.ffn.weights.visit("ffn.", &mut |n, t| out.push((n, t)));
        self.tgt_decoder.weights.visit("decoder.", &mut |n, t| out.push((n, t)));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = self.src_encoder.params_mut();
        out.extend(self.ffn.params_mut());
        out.extend(self.tgt_decoder.params_mut());
        out
    }

    pub fn cast<G: Scalar>(&self) -> TranslatorModel<G> {
        TranslatorModel {
            src_encoder: self.src_encoder.cast(),
            ffn: self.ffn.cast(),
            tgt_decoder: self.tgt_decoder.cast(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.named_params().iter().all(|(_, t)| t.is_finite())
    }
}

/// Reconstruction loss of `batch` through encoder and decoder on one tape.
pub fn autoencoder_loss_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    enc: (&EncoderWeights<Var>, &EncoderConfig),
    dec: (&DecoderWeights<Var>, &DecoderConfig),
    batch: &TokenBatch,
    rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> Result<Var> {
    let emb = embed_on_tape(tape, enc.0, enc.1, batch, rng)?;
    teacher_forced_loss_on_tape(tape, dec.0, dec.1, emb, batch)
}

/// Teacher-forced loss of `tgt` given the translated embedding of `src`.
pub fn translator_loss_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    enc: (&EncoderWeights<Var>, &EncoderConfig),
    ffn: &FfnWeights<Var>,
    dec: (&DecoderWeights<Var>, &DecoderConfig),
    src: &TokenBatch,
    tgt: &TokenBatch,
    rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> Result<Var> {
    if src.batch != tgt.batch {
        return Err(ModelError::Config(format!(
            "source batch has {} rows but target batch has {}",
            src.batch, tgt.batch
        )));
    }
    let emb = embed_on_tape(tape, enc.0, enc.1, src, rng)?;
    let moved = translate_thought_on_tape(tape, ffn, emb)?;
    teacher_forced_loss_on_tape(tape, dec.0, dec.1, moved, tgt)
}

/// Evaluation-mode reconstruction loss.
pub fn autoencoder_loss<F: Scalar>(model: &AutoencoderModel<F>, batch: &TokenBatch) -> Result<F> {
    let mut tape = Tape::new();
    let e = model.encoder.bind_frozen(&mut tape);
    let d = model.decoder.bind_frozen(&mut tape);
    let loss = autoencoder_loss_on_tape(&mut tape, (&e, &model.encoder.config), (&d, &model.decoder.config), batch, None)?;
    Ok(tape.value(loss).item()?)
}

/// Evaluation-mode translation loss.
pub fn translator_loss<F: Scalar>(model: &TranslatorModel<F>, src: &TokenBatch, tgt: &TokenBatch) -> Result<F> {
    let mut tape = Tape::new();
    let e = model.src_encoder.bind_frozen(&mut tape);
    let f = model.ffn.bind_frozen(&mut tape);
    let d = model.tgt_decoder.bind_frozen(&mut tape);
    let loss = translator_loss_on_tape(
        &mut tape,
        (&e, &model.src_encoder.config),
        &f,
        (&d, &model.tgt_decoder.config),
        src,
        tgt,
        None,
    )?;
    Ok(tape.value(loss).item()?)
}

const DECODE_BATCH: usize = 64;

/// Sentence embeddings for `id_lists`, batched, truncated to the encoder's
/// position table.
fn embed_lists<F: Scalar>(encoder: &EncoderParams<F>, id_lists: &[Vec<u32>]) -> Result<Vec<(Vec<usize>, Tensor<F>)>> {
    let idx: Vec<usize> = (0..id_lists.len()).collect();
    idx.chunks(DECODE_BATCH)
        .map(|chunk| {
            let batch = assemble_batch(id_lists, chunk, encoder.config.max_positions);
            Ok((chunk.to_vec(), crate::encoder::sentence_embeddings(encoder, &batch)?))
        })
        .collect()
}

/// Greedy reconstructions of encoded sentences (each `BOS … EOS`).
pub fn autoencode<F: Scalar>(model: &AutoencoderModel<F>, id_lists: &[Vec<u32>], max_len: usize) -> Result<Vec<Vec<u32>>> {
    let mut out = Vec::with_capacity(id_lists.len());
    for (_, emb) in embed_lists(&model.encoder, id_lists)? {
        out.extend(greedy_decode_batch(&model.decoder, &emb, max_len)?);
    }
    Ok(out)
}

/// Greedy translations of encoded source sentences.
pub fn translate_ids<F: Scalar>(model: &TranslatorModel<F>, id_lists: &[Vec<u32>], max_len: usize) -> Result<Vec<Vec<u32>>> {
    let mut out = Vec::with_capacity(id_lists.len());
    for (_, emb) in embed_lists(&model.src_encoder, id_lists)? {
        let moved = translate_thought(&model.ffn, &emb)?;
        out.extend(greedy_decode_batch(&model.tgt_decoder, &moved, max_len)?);
    }
    Ok(out)
}

pub(crate) fn encode_text(vocab: &Vocab, sentence: &str) -> Result<Vec<u32>> {
    let tokens = tokenize(sentence);
    if tokens.is_empty() {
        return Err(ModelError::Empty("sentence has no tokens"));
    }
    Ok(vocab.encode_ids(&tokens, true))
}

/// Translates raw text: tokenize, encode, map through `F`, decode greedily
/// and detokenize.
pub fn translate<F: Scalar>(model: &TranslatorModel<F>, sentence: &str, src_vocab: &Vocab, tgt_vocab: &Vocab, max_len: usize) -> Result<String> {
    let ids = encode_text(src_vocab, sentence)?;
    let out = translate_ids(model, &[ids], max_len)?.remove(0);
    Ok(detokenize(&tgt_vocab.decode(&out)))
}

/// Reconstructs raw text through the autoencoder.
pub fn reconstruct<F: Scalar>(model: &AutoencoderModel<F>, sentence: &str, vocab: &Vocab, max_len: usize) -> Result<String> {
    let ids = encode_text(vocab, sentence)?;
    let out = autoencode(model, &[ids], max_len)?.remove(0);
    Ok(detokenize(&vocab.decode(&out)))
}
