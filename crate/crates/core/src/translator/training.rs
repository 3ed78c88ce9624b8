use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    autoencoder_loss, autoencoder_loss_on_tape, translator_loss, translator_loss_on_tape, AutoencoderModel, FfnParams,
    TranslatorModel,
};
use crate::decoder::{DecoderConfig, DecoderParams};
use crate::encoder::EncoderParams;
use crate::error::{ModelError, Result};
use crate::history::TrainHistory;
use crate::numerics::{Adam, AdamConfig, Tape, Tensor, Var};
use crate::params::derive_seed;
use crate::text::{assemble_batch, batch_order, split_indices, TokenBatch};
use crate::train::Updater;

// Random streams derived from the run seed.
const DROPOUT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;
const DECODER_INIT_STREAM: u64 = 5;
const FFN_INIT_STREAM: u64 = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Sequences longer than this are truncated (EOS kept).
    pub max_len: usize,
    pub adam: AdamConfig,
    pub clip_norm: Option<f32>,
    /// Learning-rate multiplier for the pretrained encoder.
    pub encoder_lr_scale: f32,
    /// Learning-rate multiplier for a transferred decoder.
    pub decoder_lr_scale: f32,
    /// Keep the target decoder fixed during translator training.
    pub freeze_decoder: bool,
    /// Stop after the first epoch whose validation loss is at or below this.
    pub stop_at_val_loss: Option<f64>,
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            max_len: 64,
            adam: AdamConfig::default(),
            clip_norm: Some(1.0),
            encoder_lr_scale: 1.0,
            decoder_lr_scale: 0.1,
            freeze_decoder: false,
            stop_at_val_loss: None,
            record_timing: true,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_len < 2 {
            return Err(ModelError::Config(format!(
                "batch_size must be >= 1 and max_len >= 2 (got {}, {})",
                self.batch_size, self.max_len
            )));
        }
        for (name, s) in [("encoder_lr_scale", self.encoder_lr_scale), ("decoder_lr_scale", self.decoder_lr_scale)] {
            if !(s > 0.0 && s <= 1.0) {
                return Err(ModelError::Config(format!("{name} must be in (0, 1], got {s}")));
            }
        }
        if !(self.adam.lr > 0.0) {
            return Err(ModelError::Config(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        Ok(())
    }
}

/// Where the translator's target decoder comes from.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum DecoderInit {
    /// Copied from a trained autoencoder; fine-tuned at `decoder_lr_scale`.
    Transfer(DecoderParams<f32>),
    /// Freshly initialized from the run seed; trained at the full rate.
    Fresh(DecoderConfig),
}

/// Deterministically splits off `fraction` of `items` as validation data.
pub fn holdout<T: Clone>(items: &[T], fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let (train, valid) = split_indices(items.len(), fraction, seed);
    (
        train.iter().map(|&i| items[i].clone()).collect(),
        valid.iter().map(|&i| items[i].clone()).collect(),
    )
}

/// Number of scored positions (every real token after the first).
fn target_tokens(batch: &TokenBatch) -> usize {
    batch.lengths.iter().map(|&n| n.saturating_sub(1)).sum()
}

/// Token-weighted mean of a per-batch mean loss over `n` items.
fn weighted_mean(n: usize, batch_size: usize, mut eval: impl FnMut(&[usize]) -> Result<(f64, usize)>) -> Result<Option<f64>> {
    if n == 0 {
        return Ok(None);
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for idx in batch_order(n, batch_size, None) {
        let (loss, tokens) = eval(&idx)?;
        sum += loss * tokens as f64;
        count += tokens;
    }
    Ok(Some(sum / count as f64))
}

/// Token-weighted mean teacher-forced loss of the autoencoder over
/// `id_lists`, in evaluation mode. `None` for an empty corpus.
pub fn autoencoder_corpus_loss(model: &AutoencoderModel, id_lists: &[Vec<u32>], batch_size: usize, max_len: usize) -> Result<Option<f64>> {
    weighted_mean(id_lists.len(), batch_size, |idx| {
        let batch = assemble_batch(id_lists, idx, max_len);
        Ok((autoencoder_loss(model, &batch)? as f64, target_tokens(&batch)))
    })
}

/// Token-weighted mean teacher-forced loss of the translator over aligned
/// id lists, in evaluation mode. `None` for an empty corpus.
pub fn translator_corpus_loss(
    model: &TranslatorModel,
    src: &[Vec<u32>],
    tgt: &[Vec<u32>],
    batch_size: usize,
    max_len: usize,
) -> Result<Option<f64>> {
    if src.len() != tgt.len() {
        return Err(ModelError::Config(format!("{} source but {} target sentences", src.len(), tgt.len())));
    }
    weighted_mean(src.len(), batch_size, |idx| {
        let s = assemble_batch(src, idx, max_len);
        let t = assemble_batch(tgt, idx, max_len);
        Ok((translator_loss(model, &s, &t)? as f64, target_tokens(&t)))
    })
}

/// The shared epoch loop. `forward` builds the loss of one batch on a fresh
/// tape and returns it with the bound trainable variables, in the same order
/// as `trainable` yields their tensors.
#[allow(clippy::too_many_arguments)]
fn fit<M>(
    model: &mut M,
    n_train: usize,
    config: &TrainConfig,
    seed: u64,
    lr_scale: Vec<f32>,
    mut forward: impl FnMut(&M, &mut Tape<f32>, &[usize], &mut ChaCha8Rng) -> Result<(Var, Vec<Var>)>,
    trainable: impl Fn(&mut M) -> Vec<&mut Tensor<f32>>,
    validate: impl Fn(&M) -> Result<Option<f64>>,
) -> Result<TrainHistory> {
    config.validate()?;
    if n_train == 0 {
        return Err(ModelError::Empty("training corpus"));
    }
    let adam = Adam::new(config.adam, trainable(model).into_iter().map(|t| &*t));
    let mut updater = Updater::new(adam, config.clip_norm, Some(lr_scale));
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, DROPOUT_STREAM, epoch as u64));
        let order = batch_order(n_train, config.batch_size, Some(derive_seed(seed, SHUFFLE_STREAM, epoch as u64)));
        let mut total = 0.0f64;
        for idx in &order {
            let mut tape = Tape::new();
            let (loss, vars) = forward(model, &mut tape, idx, &mut drop_rng)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(ModelError::NonFinite { epoch });
            }
            let grads = tape.backward(loss)?;
            updater.step(trainable(model), &tape, &grads, &vars)?;
            total += value as f64;
        }
        let val = validate(model)?;
        if val.is_some_and(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { epoch });
        }
        let seconds = if config.record_timing { start.elapsed().as_secs_f64() } else { 0.0 };
        history.push(total / order.len() as f64, val, seconds, 0);
        if let (Some(limit), Some(v)) = (config.stop_at_val_loss, val) {
            if v <= limit {
                break;
            }
        }
    }
    Ok(history)
}

fn vars_of<T: Copy>(visit: impl FnOnce(&mut dyn FnMut(T))) -> Vec<T> {
    let mut out = Vec::new();
    visit(&mut |v| out.push(v));
    out
}

/// Jointly fine-tunes `encoder` and trains a fresh decoder to reconstruct
/// each sentence from its embedding. Sentences are `BOS … EOS` id lists.
pub fn train_autoencoder(
    encoder: EncoderParams<f32>,
    train: &[Vec<u32>],
    valid: &[Vec<u32>],
    config: &TrainConfig,
    seed: u64,
) -> Result<(AutoencoderModel, TrainHistory)> {
    if config.max_len > encoder.config.max_positions {
        return Err(ModelError::Config(format!(
            "max_len {} exceeds encoder max_positions {}",
            config.max_len, encoder.config.max_positions
        )));
    }
    let dec_config = DecoderConfig {
        vocab_size: encoder.config.vocab_size,
        embed_dim: encoder.embed_dim(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, DECODER_INIT_STREAM, 0));
    let decoder = DecoderParams::init(dec_config, &mut rng)?;
    let mut model = AutoencoderModel::new(encoder, decoder)?;

    let n_enc = model.encoder.named_params().len();
    let n_dec = model.decoder.named_params().len();
    let mut scale = vec![config.encoder_lr_scale; n_enc];
    scale.extend(vec![1.0; n_dec]);

    let max_len = config.max_len;
    let history = fit(
        &mut model,
        train.len(),
        config,
        seed,
        scale,
        |m, tape, idx, rng| {
            let batch = assemble_batch(train, idx, max_len);
            let e = m.encoder.bind(tape);
            let d = m.decoder.bind(tape);
            let loss = autoencoder_loss_on_tape(tape, (&e, &m.encoder.config), (&d, &m.decoder.config), &batch, Some(rng))?;
            let mut vars = vars_of(|f| e.visit("", &mut |_, v| f(*v)));
            vars.extend(vars_of(|f| d.visit("", &mut |_, v| f(*v))));
            Ok((loss, vars))
        },
        |m| m.params_mut(),
        |m| autoencoder_corpus_loss(m, valid, config.batch_size, max_len),
    )?;
    Ok((model, history))
}

/// Trains a fresh translator `F` between `src_encoder`'s thought-space and
/// the decoder's, fine-tuning the pretrained modules at their reduced rates.
pub fn train_translator(
    src_encoder: EncoderParams<f32>,
    decoder: DecoderInit,
    train: &[(Vec<u32>, Vec<u32>)],
    valid: &[(Vec<u32>, Vec<u32>)],
    config: &TrainConfig,
    seed: u64,
) -> Result<(TranslatorModel, TrainHistory)> {
    if config.max_len > src_encoder.config.max_positions {
        return Err(ModelError::Config(format!(
            "max_len {} exceeds encoder max_positions {}",
            config.max_len, src_encoder.config.max_positions
        )));
    }
    let k = src_encoder.embed_dim();
    let (decoder, dec_scale) = match decoder {
        DecoderInit::Transfer(d) => (d, config.decoder_lr_scale),
        DecoderInit::Fresh(cfg) => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, DECODER_INIT_STREAM, 0));
            (DecoderParams::init(cfg, &mut rng)?, 1.0)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, FFN_INIT_STREAM, 0));
    let ffn = FfnParams::init(k, &mut rng)?;
    let mut model = TranslatorModel::new(src_encoder, ffn, decoder)?;

    let freeze = config.freeze_decoder;
    let mut scale = vec![config.encoder_lr_scale; model.src_encoder.named_params().len()];
    scale.extend(vec![1.0; model.ffn.named_params().len()]);
    if !freeze {
        scale.extend(vec![dec_scale; model.tgt_decoder.named_params().len()]);
    }

    let (src_train, tgt_train): (Vec<Vec<u32>>, Vec<Vec<u32>>) = train.iter().cloned().unzip();
    let (src_valid, tgt_valid): (Vec<Vec<u32>>, Vec<Vec<u32>>) = valid.iter().cloned().unzip();
    let max_len = config.max_len;
    let history = fit(
        &mut model,
        train.len(),
        config,
        seed,
        scale,
        |m, tape, idx, rng| {
            let src = assemble_batch(&src_train, idx, max_len);
            let tgt = assemble_batch(&tgt_train, idx, max_len);
            let e = m.src_encoder.bind(tape);
            let f = m.ffn.bind(tape);
            let d = if freeze { m.tgt_decoder.bind_frozen(tape) } else { m.tgt_decoder.bind(tape) };
            let loss = translator_loss_on_tape(
                tape,
                (&e, &m.src_encoder.config),
                &f,
                (&d, &m.tgt_decoder.config),
                &src,
                &tgt,
                Some(rng),
            )?;
            let mut vars = vars_of(|g| e.visit("", &mut |_, v| g(*v)));
            vars.extend(vars_of(|g| f.visit("", &mut |_, v| g(*v))));
            if !freeze {
                vars.extend(vars_of(|g| d.visit("", &mut |_, v| g(*v))));
            }
            Ok((loss, vars))
        },
        |m| {
            let mut out = m.src_encoder.params_mut();
            out.extend(m.ffn.params_mut());
            if !freeze {
                out.extend(m.tgt_decoder.params_mut());
            }
            out
        },
        |m| translator_corpus_loss(m, &src_valid, &tgt_valid, config.batch_size, max_len),
    )?;
    Ok((model, history))
}
