//! Transformer encoder stack, masked mean pooling to sentence embeddings,
//! and masked-language-model pretraining.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ModelError, Result};
use crate::history::TrainHistory;
use crate::numerics::{Adam, AdamConfig, Scalar, Tape, Tensor, Var};
use crate::params::{derive_seed, normal, weights};
use crate::text::{assemble_batch, batch_order, TokenBatch, MASK, NUM_RESERVED};
use crate::train::Updater;

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_hidden: usize,
    pub max_positions: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    /// Desk-scale defaults: k = 64, two layers of four heads.
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_hidden: 128,
            max_positions: 64,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.embed_dim,
            self.num_layers,
            self.num_heads,
            self.ffn_hidden,
            self.max_positions,
        ];
        if dims.contains(&0) {
            return Err(ModelError::Config(format!("encoder dimensions must be positive: {self:?}")));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(ModelError::Config(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

weights!(
    /// One pre-norm transformer block.
    pub struct LayerWeights {
        wq,
        wk,
        wv,
        wo,
        ln1_gain,
        ln1_bias,
        ln2_gain,
        ln2_bias,
        ff_w1,
        ff_b1,
        ff_w2,
        ff_b2,
    }
);

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights<T> {
    pub token_embedding: T,
    pub position_embedding: T,
    pub layers: Vec<LayerWeights<T>>,
    pub final_gain: T,
    pub final_bias: T,
}

impl<T> EncoderWeights<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> EncoderWeights<U> {
        EncoderWeights {
            token_embedding: f(&self.token_embedding),
            position_embedding: f(&self.position_embedding),
            layers: self.layers.iter().map(|l| l.map(f)).collect(),
            final_gain: f(&self.final_gain),
            final_bias: f(&self.final_bias),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
        f(format!("{prefix}token_embedding"), &self.token_embedding);
        f(format!("{prefix}position_embedding"), &self.position_embedding);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&format!("{prefix}layers.{i}."), f);
        }
        f(format!("{prefix}final_gain"), &self.final_gain);
        f(format!("{prefix}final_bias"), &self.final_bias);
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(&'a mut T)) {
        f(&mut self.token_embedding);
        f(&mut self.position_embedding);
        for layer in &mut self.layers {
            layer.visit_mut(f);
        }
        f(&mut self.final_gain);
        f(&mut self.final_bias);
    }
}

/// Learnable parameters of the encoder `B_L`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<F = f32> {
    pub config: EncoderConfig,
    pub weights: EncoderWeights<Tensor<F>>,
}

impl<F: Scalar> EncoderParams<F> {
    pub fn init(config: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (v, k, h) = (config.vocab_size, config.embed_dim, config.ffn_hidden);
        let token_embedding = normal(&[v, k], INIT_STD, rng);
        let position_embedding = normal(&[config.max_positions, k], INIT_STD, rng);
        let layers = (0..config.num_layers)
            .map(|_| LayerWeights {
                wq: normal(&[k, k], INIT_STD, rng),
                wk: normal(&[k, k], INIT_STD, rng),
                wv: normal(&[k, k], INIT_STD, rng),
                wo: normal(&[k, k], INIT_STD, rng),
                ln1_gain: Tensor::ones(&[k]),
                ln1_bias: Tensor::zeros(&[k]),
                ln2_gain: Tensor::ones(&[k]),
                ln2_bias: Tensor::zeros(&[k]),
                ff_w1: normal(&[k, h], INIT_STD, rng),
                ff_b1: Tensor::zeros(&[h]),
                ff_w2: normal(&[h, k], INIT_STD, rng),
                ff_b2: Tensor::zeros(&[k]),
            })
            .collect();
        Ok(Self {
            config,
            weights: EncoderWeights {
                token_embedding,
                position_embedding,
                layers,
                final_gain: Tensor::ones(&[k]),
                final_bias: Tensor::zeros(&[k]),
            },
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn bind(&self, tape: &mut Tape<F>) -> EncoderWeights<Var> {
        self.weights.map(&mut |t| tape.param(t.clone()))
    }

    pub fn bind_frozen(&self, tape: &mut Tape<F>) -> EncoderWeights<Var> {
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

    pub fn cast<G: Scalar>(&self) -> EncoderParams<G> {
        EncoderParams {
            config: self.config.clone(),
            weights: self.weights.map(&mut |t| t.cast()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.named_params().iter().all(|(_, t)| t.is_finite())
    }
}

fn dropout<F: Scalar>(tape: &mut Tape<F>, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = F::lit(1.0 / (1.0 - rate));
            let n = tape.value(x).len();
            let factors = (0..n)
                .map(|_| if rng.random::<f64>() < rate { F::zero() } else { keep })
                .collect();
            Ok(tape.mul_const(x, factors)?)
        }
        _ => Ok(x),
    }
}

fn check_batch(config: &EncoderConfig, batch: &TokenBatch) -> Result<()> {
    if batch.len > config.max_positions {
        return Err(ModelError::Length {
            len: batch.len,
            max: config.max_positions,
        });
    }
    if let Some(&id) = batch.ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(ModelError::VocabRange {
            id,
            size: config.vocab_size,
        });
    }
    Ok(())
}

/// Runs the encoder stack on `batch`, returning final-layer hidden states of
/// shape `[batch, len, k]`.
///
/// Attention never looks at PAD keys. Dropout is applied only when `rng` is
/// given.
pub fn encode_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    w: &EncoderWeights<Var>,
    config: &EncoderConfig,
    batch: &TokenBatch,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    check_batch(config, batch)?;
    let (b, l, k) = (batch.batch, batch.len, config.embed_dim);
    let eps = F::lit(LN_EPS);
    let positions: Vec<u32> = (0..b).flat_map(|_| 0..l as u32).collect();

    let tok = tape.gather(w.token_embedding, &batch.ids)?;
    let pos = tape.gather(w.position_embedding, &positions)?;
    let mut x = tape.add(tok, pos)?;
    x = dropout(tape, x, config.dropout, rng.as_deref_mut())?;

    for layer in &w.layers {
        let a = tape.layer_norm(x, layer.ln1_gain, layer.ln1_bias, eps)?;
        let q = tape.matmul(a, layer.wq)?;
        let kk = tape.matmul(a, layer.wk)?;
        let v = tape.matmul(a, layer.wv)?;
        let att = tape.attention(q, kk, v, &batch.mask, b, config.num_heads)?;
        let o = tape.matmul(att, layer.wo)?;
        let o = dropout(tape, o, config.dropout, rng.as_deref_mut())?;
        x = tape.add(x, o)?;

        let f = tape.layer_norm(x, layer.ln2_gain, layer.ln2_bias, eps)?;
        let f = tape.matmul(f, layer.ff_w1)?;
        let f = tape.add_bias(f, layer.ff_b1)?;
        let f = tape.relu(f);
        let f = tape.matmul(f, layer.ff_w2)?;
        let f = tape.add_bias(f, layer.ff_b2)?;
        let f = dropout(tape, f, config.dropout, rng.as_deref_mut())?;
        x = tape.add(x, f)?;
    }
    let h = tape.layer_norm(x, w.final_gain, w.final_bias, eps)?;
    Ok(tape.reshape(h, &[b, l, k])?)
}

/// Encoder followed by masked mean pooling: the sentence embeddings `[batch, k]`.
pub fn embed_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    w: &EncoderWeights<Var>,
    config: &EncoderConfig,
    batch: &TokenBatch,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let hidden = encode_on_tape(tape, w, config, batch, rng)?;
    Ok(tape.mean_pool(hidden, &batch.mask)?)
}

/// Final-layer hidden states `[batch, len, k]` in evaluation mode.
pub fn encode<F: Scalar>(params: &EncoderParams<F>, batch: &TokenBatch) -> Result<Tensor<F>> {
    let mut tape = Tape::new();
    let w = params.bind_frozen(&mut tape);
    let h = encode_on_tape(&mut tape, &w, &params.config, batch, None)?;
    Ok(tape.value(h).clone())
}

/// Mean of the hidden vectors at mask-true positions, per row.
pub fn mean_pool<F: Scalar>(hidden: &Tensor<F>, mask: &[bool]) -> Result<Tensor<F>> {
    Ok(crate::numerics::mean_pool(hidden, mask)?)
}

/// Sentence embeddings `[batch, k]` in evaluation mode.
pub fn sentence_embeddings<F: Scalar>(params: &EncoderParams<F>, batch: &TokenBatch) -> Result<Tensor<F>> {
    mean_pool(&encode(params, batch)?, &batch.mask)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlmConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_len: usize,
    pub mask_prob: f64,
    pub adam: AdamConfig,
    pub clip_norm: Option<f32>,
    pub record_timing: bool,
}

impl Default for MlmConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            max_len: 64,
            mask_prob: 0.15,
            adam: AdamConfig::default(),
            clip_norm: Some(1.0),
            record_timing: true,
        }
    }
}

/// Replaces each non-special real token with MASK with probability
/// `mask_prob`. Returns the corrupted batch and, per position, the original id
/// at selected positions (PAD elsewhere).
pub fn mask_tokens(batch: &TokenBatch, mask_prob: f64, rng: &mut impl Rng) -> (TokenBatch, Vec<u32>) {
    let mut corrupted = batch.clone();
    let mut targets = vec![crate::text::PAD; batch.ids.len()];
    for (i, id) in corrupted.ids.iter_mut().enumerate() {
        if batch.mask[i] && *id as usize >= NUM_RESERVED && rng.random::<f64>() < mask_prob {
            targets[i] = *id;
            *id = MASK;
        }
    }
    (corrupted, targets)
}

/// Masked-token loss with the output projection tied to the token embedding.
/// `None` when no position was selected.
fn mlm_loss<F: Scalar>(
    tape: &mut Tape<F>,
    w: &EncoderWeights<Var>,
    config: &EncoderConfig,
    corrupted: &TokenBatch,
    targets: &[u32],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Option<(Var, Var, Vec<u32>)>> {
    let selected: Vec<u32> = (0..targets.len())
        .filter(|&i| targets[i] != crate::text::PAD)
        .map(|i| i as u32)
        .collect();
    if selected.is_empty() {
        return Ok(None);
    }
    let hidden = encode_on_tape(tape, w, config, corrupted, rng)?;
    let flat = tape.reshape(hidden, &[corrupted.batch * corrupted.len, config.embed_dim])?;
    let rows = tape.gather(flat, &selected)?;
    let logits = tape.matmul_bt(rows, w.token_embedding)?;
    let gold: Vec<u32> = selected.iter().map(|&i| targets[i as usize]).collect();
    let loss = tape.cross_entropy(logits, &gold, None)?;
    Ok(Some((loss, logits, gold)))
}

/// Masked-token evaluation in inference mode.
#[derive(Clone, Debug, PartialEq)]
pub struct MlmEval {
    pub loss: f64,
    pub accuracy: f64,
    /// Accuracy of always predicting the most frequent masked token.
    pub majority_baseline: f64,
    pub masked: usize,
}

pub fn mlm_evaluate(
    params: &EncoderParams<f32>,
    id_lists: &[Vec<u32>],
    batch_size: usize,
    max_len: usize,
    mask_prob: f64,
    mask_seed: u64,
) -> Result<Option<MlmEval>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let (mut loss_sum, mut correct, mut masked) = (0.0f64, 0usize, 0usize);
    let mut counts = std::collections::HashMap::<u32, usize>::new();
    for idx in batch_order(id_lists.len(), batch_size, None) {
        let batch = assemble_batch(id_lists, &idx, max_len);
        let (corrupted, targets) = mask_tokens(&batch, mask_prob, &mut rng);
        let mut tape = Tape::new();
        let w = params.bind_frozen(&mut tape);
        let Some((loss, logits, gold)) = mlm_loss(&mut tape, &w, &params.config, &corrupted, &targets, None)? else {
            continue;
        };
        loss_sum += tape.value(loss).item()? as f64 * gold.len() as f64;
        let lv = tape.value(logits);
        for (r, &g) in gold.iter().enumerate() {
            if argmax(lv.row(r)) == g as usize {
                correct += 1;
            }
            *counts.entry(g).or_default() += 1;
        }
        masked += gold.len();
    }
    if masked == 0 {
        return Ok(None);
    }
    let majority = counts.values().copied().max().unwrap_or(0);
    Ok(Some(MlmEval {
        loss: loss_sum / masked as f64,
        accuracy: correct as f64 / masked as f64,
        majority_baseline: majority as f64 / masked as f64,
        masked,
    }))
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Masked-language-model pretraining with Adam.
///
/// Batches in which no position gets masked are skipped and counted in the
/// epoch record. Validation loss uses one fixed masking of `valid`.
pub fn mlm_pretrain(
    mut params: EncoderParams<f32>,
    train: &[Vec<u32>],
    valid: &[Vec<u32>],
    config: &MlmConfig,
    seed: u64,
) -> Result<(EncoderParams<f32>, TrainHistory)> {
    if train.is_empty() {
        return Err(ModelError::Empty("pretraining corpus"));
    }
    if config.max_len > params.config.max_positions {
        return Err(ModelError::Config(format!(
            "max_len {} exceeds encoder max_positions {}",
            config.max_len, params.config.max_positions
        )));
    }
    let mut updater = Updater::new(
        Adam::new(config.adam, params.named_params().into_iter().map(|(_, t)| t)),
        config.clip_norm,
        None,
    );
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut mask_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, epoch as u64));
        let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2, epoch as u64));
        let order = batch_order(train.len(), config.batch_size, Some(derive_seed(seed, 3, epoch as u64)));
        let (mut total, mut batches, mut skipped) = (0.0f64, 0usize, 0usize);
        for idx in order {
            let batch = assemble_batch(train, &idx, config.max_len);
            let (corrupted, targets) = mask_tokens(&batch, config.mask_prob, &mut mask_rng);
            let mut tape = Tape::new();
            let w = params.bind(&mut tape);
            let Some((loss, _, _)) =
                mlm_loss(&mut tape, &w, &params.config, &corrupted, &targets, Some(&mut drop_rng))?
            else {
                skipped += 1;
                continue;
            };
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(ModelError::NonFinite { epoch });
            }
            let grads = tape.backward(loss)?;
            let mut vars = Vec::new();
            w.visit("", &mut |_, v| vars.push(*v));
            updater.step(params.params_mut(), &tape, &grads, &vars)?;
            total += value as f64;
            batches += 1;
        }
        let val = if valid.is_empty() {
            None
        } else {
            mlm_evaluate(
                &params,
                valid,
                config.batch_size,
                config.max_len,
                config.mask_prob,
                derive_seed(seed, 4, 0),
            )?
            .map(|e| e.loss)
        };
        let train_loss = if batches == 0 { f64::NAN } else { total / batches as f64 };
        let seconds = if config.record_timing { start.elapsed().as_secs_f64() } else { 0.0 };
        history.push(train_loss, val, seconds, skipped);
    }
    Ok((params, history))
}
