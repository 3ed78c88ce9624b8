//! Value-level wrappers: run a single tape operation on constants and return
//! the result.

use super::{Result, Scalar, Tape, Tensor, Var};

fn unary<F: Scalar>(x: &Tensor<F>, f: impl FnOnce(&mut Tape<F>, Var) -> Result<Var>) -> Result<Tensor<F>> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = f(&mut tape, v)?;
    Ok(tape.value(out).clone())
}

pub fn matmul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let out = tape.matmul(av, bv)?;
    Ok(tape.value(out).clone())
}

/// Softmax along the last axis.
pub fn softmax<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>> {
    unary(x, |t, v| t.softmax(v))
}

pub fn layer_norm<F: Scalar>(x: &Tensor<F>, gain: &Tensor<F>, bias: &Tensor<F>, eps: F) -> Result<Tensor<F>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let (g, b) = (tape.constant(gain.clone()), tape.constant(bias.clone()));
    let out = tape.layer_norm(xv, g, b, eps)?;
    Ok(tape.value(out).clone())
}

pub fn relu<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| if v > F::zero() { v } else { F::zero() })
}

pub fn tanh<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    x.map(F::tanh)
}

pub fn sigmoid<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    unary(x, |t, v| Ok(t.sigmoid(v))).expect("elementwise op cannot fail")
}

/// Mean cross-entropy of `[n, classes]` logits; rows whose target equals
/// `ignore` are left out of both the sum and the count.
pub fn cross_entropy<F: Scalar>(logits: &Tensor<F>, targets: &[u32], ignore: Option<u32>) -> Result<F> {
    unary(logits, |t, v| t.cross_entropy(v, targets, ignore))?.item()
}

pub fn attention<F: Scalar>(
    q: &Tensor<F>,
    k: &Tensor<F>,
    v: &Tensor<F>,
    key_mask: &[bool],
    batch: usize,
    heads: usize,
) -> Result<Tensor<F>> {
    let mut tape = Tape::new();
    let (qv, kv, vv) = (
        tape.constant(q.clone()),
        tape.constant(k.clone()),
        tape.constant(v.clone()),
    );
    let out = tape.attention(qv, kv, vv, key_mask, batch, heads)?;
    Ok(tape.value(out).clone())
}

/// Masked mean over the length axis of `[batch, len, d]`.
pub fn mean_pool<F: Scalar>(hidden: &Tensor<F>, mask: &[bool]) -> Result<Tensor<F>> {
    unary(hidden, |t, v| t.mean_pool(v, mask))
}
