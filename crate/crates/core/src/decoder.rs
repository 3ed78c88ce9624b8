//! Single-layer GRU language decoder `B⁻¹_L`: the sentence embedding is the
//! initial hidden state, inputs come from a decoder-owned word embedding.

use rand::Rng;

use crate::encoder::argmax;
use crate::error::{ModelError, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};
use crate::params::{normal, weights};
use crate::text::{TokenBatch, BOS, EOS, PAD};

const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderConfig {
    pub vocab_size: usize,
    /// Word-embedding size, equal to the GRU hidden size.
    pub embed_dim: usize,
}

weights!(
    /// GRU gates use the row-vector convention `x·W + h·U + b`.
    pub struct DecoderWeights {
        word_embedding,
        w_z,
        u_z,
        b_z,
        w_r,
        u_r,
        b_r,
        w_h,
        u_h,
        b_h,
        out_w,
        out_b,
    }
);

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<F = f32> {
    pub config: DecoderConfig,
    pub weights: DecoderWeights<Tensor<F>>,
}

impl<F: Scalar> DecoderParams<F> {
    pub fn init(config: DecoderConfig, rng: &mut impl Rng) -> Result<Self> {
        let (v, k) = (config.vocab_size, config.embed_dim);
        if v == 0 || k == 0 {
            return Err(ModelError::Config(format!("decoder dimensions must be positive: {config:?}")));
        }
        let weights = DecoderWeights {
            word_embedding: normal(&[v, k], INIT_STD, rng),
            w_z: normal(&[k, k], INIT_STD, rng),
            u_z: normal(&[k, k], INIT_STD, rng),
            b_z: Tensor::zeros(&[k]),
            w_r: normal(&[k, k], INIT_STD, rng),
            u_r: normal(&[k, k], INIT_STD, rng),
            b_r: Tensor::zeros(&[k]),
            w_h: normal(&[k, k], INIT_STD, rng),
            u_h: normal(&[k, k], INIT_STD, rng),
            b_h: Tensor::zeros(&[k]),
            out_w: normal(&[k, v], INIT_STD, rng),
            out_b: Tensor::zeros(&[v]),
        };
        Ok(Self { config, weights })
    }

    /// Every parameter set to zero.
    pub fn zeros(config: DecoderConfig) -> Self {
        let (v, k) = (config.vocab_size, config.embed_dim);
        let z = |s: &[usize]| Tensor::zeros(s);
        let weights = DecoderWeights {
            word_embedding: z(&[v, k]),
            w_z: z(&[k, k]),
            u_z: z(&[k, k]),
            b_z: z(&[k]),
            w_r: z(&[k, k]),
            u_r: z(&[k, k]),
            b_r: z(&[k]),
            w_h: z(&[k, k]),
            u_h: z(&[k, k]),
            b_h: z(&[k]),
            out_w: z(&[k, v]),
            out_b: z(&[v]),
        };
        Self { config, weights }
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn bind(&self, tape: &mut Tape<F>) -> DecoderWeights<Var> {
        self.weights.map(&mut |t| tape.param(t.clone()))
    }

    pub fn bind_frozen(&self, tape: &mut Tape<F>) -> DecoderWeights<Var> {
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

    pub fn cast<G: Scalar>(&self) -> DecoderParams<G> {
        DecoderParams {
            config: self.config.clone(),
            weights: self.weights.map(&mut |t| t.cast()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.named_params().iter().all(|(_, t)| t.is_finite())
    }
}

fn affine<F: Scalar>(tape: &mut Tape<F>, x: Var, w: Var, h: Var, u: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let hu = tape.matmul(h, u)?;
    let s = tape.add(xw, hu)?;
    Ok(tape.add_bias(s, b)?)
}

/// One GRU step on `[batch, k]` inputs and hidden states.
pub fn gru_cell_on_tape<F: Scalar>(tape: &mut Tape<F>, w: &DecoderWeights<Var>, x: Var, h: Var) -> Result<Var> {
    if tape.shape(x) != tape.shape(h) {
        return Err(crate::numerics::NumericsError::Shape {
            op: "gru_cell",
            lhs: tape.shape(x).to_vec(),
            rhs: tape.shape(h).to_vec(),
        }
        .into());
    }
    let z = affine(tape, x, w.w_z, h, w.u_z, w.b_z)?;
    let z = tape.sigmoid(z);
    let r = affine(tape, x, w.w_r, h, w.u_r, w.b_r)?;
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h)?;
    let cand = affine(tape, x, w.w_h, rh, w.u_h, w.b_h)?;
    let cand = tape.tanh(cand);
    // (1 − z)⊙h + z⊙h̃ written as h + z⊙(h̃ − h)
    let delta = tape.sub(cand, h)?;
    let step = tape.mul(z, delta)?;
    Ok(tape.add(h, step)?)
}

/// One GRU step evaluated outside any training graph.
pub fn gru_cell<F: Scalar>(params: &DecoderParams<F>, x: &Tensor<F>, h: &Tensor<F>) -> Result<Tensor<F>> {
    let mut tape = Tape::new();
    let w = params.bind_frozen(&mut tape);
    let (xv, hv) = (tape.constant(x.clone()), tape.constant(h.clone()));
    let out = gru_cell_on_tape(&mut tape, &w, xv, hv)?;
    Ok(tape.value(out).clone())
}

fn check_ids(config: &DecoderConfig, ids: &[u32]) -> Result<()> {
    match ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        Some(&id) => Err(ModelError::VocabRange {
            id,
            size: config.vocab_size,
        }),
        None => Ok(()),
    }
}

/// Embeds `ids`, advances the GRU and projects to vocabulary logits.
/// Returns `(logits [batch, V], h')`.
pub fn step_logits_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    w: &DecoderWeights<Var>,
    config: &DecoderConfig,
    ids: &[u32],
    h: Var,
) -> Result<(Var, Var)> {
    check_ids(config, ids)?;
    let x = tape.gather(w.word_embedding, ids)?;
    let h_next = gru_cell_on_tape(tape, w, x, h)?;
    let logits = tape.matmul(h_next, w.out_w)?;
    let logits = tape.add_bias(logits, w.out_b)?;
    Ok((logits, h_next))
}

pub fn step_logits<F: Scalar>(params: &DecoderParams<F>, ids: &[u32], h: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
    let mut tape = Tape::new();
    let w = params.bind_frozen(&mut tape);
    let hv = tape.constant(h.clone());
    let (logits, h_next) = step_logits_on_tape(&mut tape, &w, &params.config, ids, hv)?;
    Ok((tape.value(logits).clone(), tape.value(h_next).clone()))
}

/// Rows must be `BOS … EOS` followed only by padding.
pub fn validate_targets(targets: &TokenBatch) -> Result<()> {
    for r in 0..targets.batch {
        let real = targets.real(r);
        if real.len() < 2 || real[0] != BOS {
            return Err(ModelError::MalformedTarget {
                row: r,
                reason: "row does not start with BOS",
            });
        }
        if real[real.len() - 1] != EOS {
            return Err(ModelError::MalformedTarget {
                row: r,
                reason: "row does not end with EOS",
            });
        }
    }
    Ok(())
}

/// Full teacher forcing: the embedding is `h₀`, step `t` reads target token
/// `t` and is scored against token `t + 1`. PAD targets are ignored.
pub fn teacher_forced_loss_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    w: &DecoderWeights<Var>,
    config: &DecoderConfig,
    embedding: Var,
    targets: &TokenBatch,
) -> Result<Var> {
    validate_targets(targets)?;
    let (b, l) = (targets.batch, targets.len);
    if tape.shape(embedding) != [b, config.embed_dim] {
        return Err(crate::numerics::NumericsError::Shape {
            op: "teacher_forced_loss",
            lhs: tape.shape(embedding).to_vec(),
            rhs: vec![b, config.embed_dim],
        }
        .into());
    }
    check_ids(config, &targets.ids)?;
    let mut h = embedding;
    let mut states = Vec::with_capacity(l - 1);
    let mut gold = Vec::with_capacity((l - 1) * b);
    for t in 0..l - 1 {
        let inputs: Vec<u32> = (0..b).map(|r| targets.ids[r * l + t]).collect();
        let x = tape.gather(w.word_embedding, &inputs)?;
        h = gru_cell_on_tape(tape, w, x, h)?;
        states.push(h);
        gold.extend((0..b).map(|r| targets.ids[r * l + t + 1]));
    }
    let stacked = tape.concat_rows(&states)?;
    let logits = tape.matmul(stacked, w.out_w)?;
    let logits = tape.add_bias(logits, w.out_b)?;
    Ok(tape.cross_entropy(logits, &gold, Some(PAD))?)
}

pub fn teacher_forced_loss<F: Scalar>(params: &DecoderParams<F>, embedding: &Tensor<F>, targets: &TokenBatch) -> Result<F> {
    let mut tape = Tape::new();
    let w = params.bind_frozen(&mut tape);
    let e = tape.constant(embedding.clone());
    let loss = teacher_forced_loss_on_tape(&mut tape, &w, &params.config, e, targets)?;
    Ok(tape.value(loss).item()?)
}

/// Greedy decoding of every row of `embeddings [batch, k]`.
///
/// Each row starts from BOS, emits the arg-max token (lowest id on ties) and
/// stops after EOS or `max_len` tokens. Returned lists exclude BOS and EOS.
pub fn greedy_decode_batch<F: Scalar>(params: &DecoderParams<F>, embeddings: &Tensor<F>, max_len: usize) -> Result<Vec<Vec<u32>>> {
    let b = embeddings.shape().first().copied().unwrap_or(0);
    if embeddings.shape() != [b, params.embed_dim()] {
        return Err(crate::numerics::NumericsError::Shape {
            op: "greedy_decode",
            lhs: embeddings.shape().to_vec(),
            rhs: vec![b, params.embed_dim()],
        }
        .into());
    }
    let mut out = vec![Vec::new(); b];
    let mut done = vec![false; b];
    let mut tape = Tape::new();
    let w = params.bind_frozen(&mut tape);
    let mut h = tape.constant(embeddings.clone());
    let mut inputs = vec![BOS; b];
    for _ in 0..max_len {
        if done.iter().all(|&d| d) {
            break;
        }
        let (logits, h_next) = step_logits_on_tape(&mut tape, &w, &params.config, &inputs, h)?;
        h = h_next;
        let lv = tape.value(logits);
        for r in 0..b {
            if done[r] {
                continue;
            }
            let id = argmax(lv.row(r)) as u32;
            if id == EOS {
                done[r] = true;
            } else {
                out[r].push(id);
                inputs[r] = id;
            }
        }
    }
    // PAD or BOS can only be emitted by an untrained model; never return them.
    for seq in &mut out {
        seq.retain(|&id| id != PAD && id != BOS);
    }
    Ok(out)
}

/// Greedy decoding of a single `[k]` (or `[1, k]`) embedding.
pub fn greedy_decode<F: Scalar>(params: &DecoderParams<F>, embedding: &Tensor<F>, max_len: usize) -> Result<Vec<u32>> {
    let row = embedding.reshape(&[1, embedding.len()])?;
    Ok(greedy_decode_batch(params, &row, max_len)?.remove(0))
}
