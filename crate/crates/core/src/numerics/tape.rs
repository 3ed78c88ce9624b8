//! Reverse-mode differentiation over a linear record of executed operations.

use super::kernels;
use super::{NumericsError, Result, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, F),
    MulConst(Var, Vec<F>),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    Gather {
        table: Var,
        ids: Vec<u32>,
    },
    Reshape(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: Vec<F>,
        batch: usize,
        len: usize,
        heads: usize,
    },
    MeanPool {
        h: Var,
        mask: Vec<bool>,
        counts: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<u32>,
        ignore: Option<u32>,
        probs: Vec<F>,
        count: usize,
    },
    Sum(Var),
    ConcatRows(Vec<Var>),
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Records operations as they execute so gradients can be accumulated in
/// reverse order.
///
/// The tape owns every intermediate value; a [`Var`] is only meaningful for
/// the tape that produced it.
#[derive(Debug)]
pub struct Tape<F = f32> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> NumericsError {
    NumericsError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// `a[..., n] · b[n, p]`, leading axes of `a` are treated as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let n = av.last_dim();
        if av.rank() < 2 || bv.rank() != 2 || bv.shape()[0] != n {
            return Err(shape_err("matmul", av.shape(), bv.shape()));
        }
        let (m, p) = (av.outer_len(), bv.shape()[1]);
        let mut out = vec![F::zero(); m * p];
        kernels::matmul_acc(av.data(), bv.data(), &mut out, m, n, p);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = p;
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a[..., n] · b[p, n]ᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let n = av.last_dim();
        if av.rank() < 2 || bv.rank() != 2 || bv.shape()[1] != n {
            return Err(shape_err("matmul_bt", av.shape(), bv.shape()));
        }
        let (m, p) = (av.outer_len(), bv.shape()[0]);
        let mut out = vec![F::zero(); m * p];
        kernels::matmul_bt_acc(av.data(), bv.data(), &mut out, m, n, p);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = p;
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMulBt(a, b), rg))
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
        op: Op<F>,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `[n]` bias to every row of `a[..., n]`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        let n = av.last_dim();
        if bv.rank() != 1 || bv.len() != n {
            return Err(shape_err("add_bias", av.shape(), bv.shape()));
        }
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, &b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(value, Op::AddBias(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let value = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// Elementwise product with a constant factor tensor (used for dropout).
    pub fn mul_const(&mut self, a: Var, factors: Vec<F>) -> Result<Var> {
        let av = self.value(a);
        if factors.len() != av.len() {
            return Err(shape_err("mul_const", av.shape(), &[factors.len()]));
        }
        let data = av.data().iter().zip(&factors).map(|(&x, &f)| x * f).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::MulConst(a, factors), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > F::zero() { x } else { F::zero() });
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(F::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| F::one() / (F::one() + (-x).exp()));
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let d = av.last_dim();
        if d == 0 {
            return Err(NumericsError::Contract("softmax over empty axis".into()));
        }
        let mut data = av.data().to_vec();
        kernels::softmax_rows(&mut data, d);
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Softmax(a), rg))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: F) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(shape_err("layer_norm", xv.shape(), gv.shape()));
        }
        let mut out = vec![F::zero(); xv.len()];
        let (xhat, inv_std) = kernels::layer_norm_rows(xv.data(), gv.data(), bv.data(), eps, &mut out);
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Selects rows of a `[rows, d]` table, producing `[ids.len(), d]`.
    pub fn gather(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(shape_err("gather", tv.shape(), &[ids.len()]));
        }
        let (rows, d) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let id = id as usize;
            if id >= rows {
                return Err(NumericsError::Index {
                    op: "gather",
                    index: id,
                    extent: rows,
                });
            }
            data.extend_from_slice(tv.row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        let rg = self.rg(table);
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Multi-head scaled dot-product self-attention.
    ///
    /// `q`, `k`, `v` are `[batch·len, width]` (or `[batch, len, width]`);
    /// `key_mask` has `batch·len` entries and false keys get zero weight.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        key_mask: &[bool],
        batch: usize,
        heads: usize,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.shape() != kv.shape() || qv.shape() != vv.shape() {
            return Err(shape_err("attention", qv.shape(), kv.shape()));
        }
        let width = qv.last_dim();
        let rows = qv.outer_len();
        if batch == 0 || rows % batch != 0 || key_mask.len() != rows {
            return Err(shape_err("attention", qv.shape(), &[batch, key_mask.len()]));
        }
        if heads == 0 || width % heads != 0 {
            return Err(shape_err("attention", &[width], &[heads]));
        }
        let len = rows / batch;
        for b in 0..batch {
            if !key_mask[b * len..(b + 1) * len].iter().any(|&m| m) {
                return Err(NumericsError::EmptyRow { row: b });
            }
        }
        let mut out = vec![F::zero(); qv.len()];
        let probs = kernels::attention_forward(
            qv.data(),
            kv.data(),
            vv.data(),
            key_mask,
            batch,
            len,
            heads,
            width,
            &mut out,
        );
        let value = Tensor::new(qv.shape().to_vec(), out)?;
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                probs,
                batch,
                len,
                heads,
            },
            rg,
        ))
    }

    /// Masked mean over the length axis of `[batch, len, d]`.
    pub fn mean_pool(&mut self, h: Var, mask: &[bool]) -> Result<Var> {
        let hv = self.value(h);
        if hv.rank() != 3 || mask.len() != hv.shape()[0] * hv.shape()[1] {
            return Err(shape_err("mean_pool", hv.shape(), &[mask.len()]));
        }
        let (batch, len, d) = (hv.shape()[0], hv.shape()[1], hv.shape()[2]);
        let mut out = vec![F::zero(); batch * d];
        let mut counts = Vec::with_capacity(batch);
        for b in 0..batch {
            let count = mask[b * len..(b + 1) * len].iter().filter(|&&m| m).count();
            if count == 0 {
                return Err(NumericsError::EmptyRow { row: b });
            }
            counts.push(count);
            let orow = &mut out[b * d..(b + 1) * d];
            for t in 0..len {
                if mask[b * len + t] {
                    for (o, &x) in orow.iter_mut().zip(hv.row(b * len + t)) {
                        *o += x;
                    }
                }
            }
            let inv = F::one() / F::lit(count as f64);
            orow.iter_mut().for_each(|o| *o *= inv);
        }
        let value = Tensor::new(vec![batch, d], out)?;
        let rg = self.rg(h);
        Ok(self.push(
            value,
            Op::MeanPool {
                h,
                mask: mask.to_vec(),
                counts,
            },
            rg,
        ))
    }

    /// Mean cross-entropy of `[n, classes]` logits against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], ignore: Option<u32>) -> Result<Var> {
        let lv = self.value(logits);
        let classes = lv.last_dim();
        if lv.rank() != 2 || lv.outer_len() != targets.len() {
            return Err(shape_err("cross_entropy", lv.shape(), &[targets.len()]));
        }
        for &t in targets {
            if Some(t) != ignore && t as usize >= classes {
                return Err(NumericsError::Index {
                    op: "cross_entropy",
                    index: t as usize,
                    extent: classes,
                });
            }
        }
        let (loss, probs, count) = kernels::cross_entropy_forward(lv.data(), classes, targets, ignore);
        if count == 0 {
            return Err(NumericsError::UndefinedMean);
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
                count,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// Stacks 2-D tensors with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NumericsError::Contract("concat of zero tensors".into()))?;
        let d = self.value(*first).last_dim();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rank() != 2 || pv.last_dim() != d {
                return Err(shape_err("concat_rows", &[rows, d], pv.shape()));
            }
            rows += pv.outer_len();
            data.extend_from_slice(pv.data());
        }
        let value = Tensor::new(vec![rows, d], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Accumulates gradients of the scalar `loss` with respect to every
    /// recorded value that requires one.
    ///
    /// The tape is not consumed, so calling this twice yields identical
    /// gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, n, p) = (av.outer_len(), av.last_dim(), bv.shape()[1]);
                if self.rg(*a) {
                    self.acc(grads, *a, |da| kernels::matmul_bt_acc(gd, bv.data(), da, m, p, n));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, |db| kernels::matmul_at_acc(av.data(), gd, db, m, n, p));
                }
            }
            Op::MatMulBt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, n, p) = (av.outer_len(), av.last_dim(), bv.shape()[0]);
                if self.rg(*a) {
                    self.acc(grads, *a, |da| kernels::matmul_acc(gd, bv.data(), da, m, p, n));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, |db| kernels::matmul_at_acc(gd, av.data(), db, m, p, n));
                }
            }
            Op::Add(a, b) => {
                self.acc_each(grads, *a, gd, |_, g| g);
                self.acc_each(grads, *b, gd, |_, g| g);
            }
            Op::Sub(a, b) => {
                self.acc_each(grads, *a, gd, |_, g| g);
                self.acc_each(grads, *b, gd, |_, g| -g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc_each(grads, *a, gd, |i, g| g * bv[i]);
                self.acc_each(grads, *b, gd, |i, g| g * av[i]);
            }
            Op::AddBias(a, bias) => {
                self.acc_each(grads, *a, gd, |_, g| g);
                if self.rg(*bias) {
                    let n = self.value(*bias).len();
                    self.acc(grads, *bias, |db| {
                        for row in gd.chunks(n) {
                            for (d, &x) in db.iter_mut().zip(row) {
                                *d += x;
                            }
                        }
                    });
                }
            }
            Op::Scale(a, c) => self.acc_each(grads, *a, gd, |_, g| g * *c),
            Op::MulConst(a, f) => self.acc_each(grads, *a, gd, |i, g| g * f[i]),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.acc_each(grads, *a, gd, |i, g| if x[i] > F::zero() { g } else { F::zero() });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                self.acc_each(grads, *a, gd, |i, g| g * (F::one() - y[i] * y[i]));
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                self.acc_each(grads, *a, gd, |i, g| g * y[i] * (F::one() - y[i]));
            }
            Op::Softmax(a) => {
                let d = node.value.last_dim();
                let y = node.value.data();
                self.acc(grads, *a, |dx| kernels::softmax_rows_backward(y, gd, dx, d));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain).data();
                let d = gv.len();
                if self.rg(*gain) {
                    self.acc(grads, *gain, |dg| {
                        for (grow, hrow) in gd.chunks(d).zip(xhat.chunks(d)) {
                            for j in 0..d {
                                dg[j] += grow[j] * hrow[j];
                            }
                        }
                    });
                }
                if self.rg(*bias) {
                    self.acc(grads, *bias, |db| {
                        for grow in gd.chunks(d) {
                            for j in 0..d {
                                db[j] += grow[j];
                            }
                        }
                    });
                }
                if self.rg(*x) {
                    let dn = F::lit(d as f64);
                    self.acc(grads, *x, |dx| {
                        let mut dh = vec![F::zero(); d];
                        for (r, (grow, hrow)) in gd.chunks(d).zip(xhat.chunks(d)).enumerate() {
                            for j in 0..d {
                                dh[j] = grow[j] * gv[j];
                            }
                            let mean_dh = dh.iter().copied().sum::<F>() / dn;
                            let mean_dh_h = kernels::dot(&dh, hrow) / dn;
                            let drow = &mut dx[r * d..(r + 1) * d];
                            for j in 0..d {
                                drow[j] += inv_std[r] * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
                            }
                        }
                    });
                }
            }
            Op::Gather { table, ids } => {
                let d = self.value(*table).last_dim();
                self.acc(grads, *table, |dt| {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut dt[id as usize * d..(id as usize + 1) * d];
                        for (o, &x) in dst.iter_mut().zip(&gd[r * d..(r + 1) * d]) {
                            *o += x;
                        }
                    }
                });
            }
            Op::Reshape(a) => self.acc_each(grads, *a, gd, |_, g| g),
            Op::Attention {
                q,
                k,
                v,
                probs,
                batch,
                len,
                heads,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let width = qv.last_dim();
                let mut dq = vec![F::zero(); qv.len()];
                let mut dk = vec![F::zero(); kv.len()];
                let mut dv = vec![F::zero(); vv.len()];
                kernels::attention_backward(
                    qv.data(),
                    kv.data(),
                    vv.data(),
                    probs,
                    gd,
                    *batch,
                    *len,
                    *heads,
                    width,
                    &mut dq,
                    &mut dk,
                    &mut dv,
                );
                self.acc_each(grads, *q, &dq, |_, g| g);
                self.acc_each(grads, *k, &dk, |_, g| g);
                self.acc_each(grads, *v, &dv, |_, g| g);
            }
            Op::MeanPool { h, mask, counts } => {
                let shape = self.value(*h).shape();
                let (len, d) = (shape[1], shape[2]);
                self.acc(grads, *h, |dh| {
                    for (b, &count) in counts.iter().enumerate() {
                        let inv = F::one() / F::lit(count as f64);
                        let grow = &gd[b * d..(b + 1) * d];
                        for t in 0..len {
                            if mask[b * len + t] {
                                let dst = &mut dh[(b * len + t) * d..(b * len + t + 1) * d];
                                for (o, &x) in dst.iter_mut().zip(grow) {
                                    *o += x * inv;
                                }
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                probs,
                count,
            } => {
                let classes = self.value(*logits).last_dim();
                let scale = gd[0] / F::lit(*count as f64);
                self.acc(grads, *logits, |dl| {
                    for (r, &t) in targets.iter().enumerate() {
                        if Some(t) == *ignore {
                            continue;
                        }
                        let prow = &probs[r * classes..(r + 1) * classes];
                        let drow = &mut dl[r * classes..(r + 1) * classes];
                        for (o, &p) in drow.iter_mut().zip(prow) {
                            *o += p * scale;
                        }
                        drow[t as usize] -= scale;
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = gd[0];
                self.acc(grads, *a, |da| da.iter_mut().for_each(|x| *x += g0));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.acc_each(grads, p, &gd[offset..offset + n], |_, g| g);
                    offset += n;
                }
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor<F>>], v: Var, f: impl FnOnce(&mut [F])) {
        if !self.rg(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.value(v).shape()));
        f(slot.data_mut());
    }

    fn acc_each(&self, grads: &mut [Option<Tensor<F>>], v: Var, g: &[F], f: impl Fn(usize, F) -> F) {
        self.acc(grads, v, |dst| {
            for (i, (d, &x)) in dst.iter_mut().zip(g).enumerate() {
                *d += f(i, x);
            }
        });
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<F = f32> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of `v`, if the loss depends on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `tape.value(v)` when the loss
    /// does not depend on it.
    pub fn wrt(&self, tape: &Tape<F>, v: Var) -> Tensor<F> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}


#[cfg(test)]
mod gradient_contract {
    use super::super::gradcheck::{check, random};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn matmul_variants() {
        for seed in 0..3 {
            let mut r = rng(seed);
            check(seed, vec![random(&[3, 4], &mut r), random(&[4, 2], &mut r)], |t, v| {
                t.matmul(v[0], v[1]).unwrap()
            });
            check(seed, vec![random(&[2, 3, 4], &mut r), random(&[5, 4], &mut r)], |t, v| {
                t.matmul_bt(v[0], v[1]).unwrap()
            });
        }
    }

    #[test]
    fn elementwise() {
        for seed in 0..3 {
            let mut r = rng(seed);
            let ins = vec![random(&[2, 3], &mut r), random(&[2, 3], &mut r), random(&[3], &mut r)];
            check(seed, ins, |t, v| {
                let a = t.add(v[0], v[1]).unwrap();
                let m = t.mul(a, v[1]).unwrap();
                let s = t.sub(m, v[0]).unwrap();
                let b = t.add_bias(s, v[2]).unwrap();
                let th = t.tanh(b);
                let sg = t.sigmoid(th);
                let r = t.relu(b);
                let sum = t.add(sg, r).unwrap();
                let sc = t.scale(sum, 1.7);
                t.mul_const(sc, vec![0.0, 2.0, 1.0, 1.0, 0.5, 3.0]).unwrap()
            });
        }
    }

    #[test]
    fn softmax_and_layer_norm() {
        for seed in 0..3 {
            let mut r = rng(seed);
            check(seed, vec![random(&[3, 5], &mut r)], |t, v| t.softmax(v[0]).unwrap());
            let ins = vec![random(&[3, 6], &mut r), random(&[6], &mut r), random(&[6], &mut r)];
            check(seed, ins, |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap());
        }
    }

    #[test]
    fn gather_reshape_concat_pool() {
        for seed in 0..3 {
            let mut r = rng(seed);
            let ins = vec![random(&[4, 3], &mut r), random(&[2, 3], &mut r)];
            check(seed, ins, |t, v| {
                let g = t.gather(v[0], &[1, 3, 1, 0]).unwrap();
                let c = t.concat_rows(&[g, v[1]]).unwrap();
                let h = t.reshape(c, &[2, 3, 3]).unwrap();
                t.mean_pool(h, &[true, true, false, false, true, true]).unwrap()
            });
        }
    }

    #[test]
    fn attention() {
        for seed in 0..4 {
            let mut r = rng(seed);
            let ins = vec![random(&[6, 4], &mut r), random(&[6, 4], &mut r), random(&[6, 4], &mut r)];
            let mask = [true, true, false, true, true, true];
            check(seed, ins, |t, v| t.attention(v[0], v[1], v[2], &mask, 2, 2).unwrap());
        }
    }

    #[test]
    fn cross_entropy() {
        for seed in 0..3 {
            let mut r = rng(seed);
            check(seed, vec![random(&[4, 5], &mut r)], |t, v| {
                let scaled = t.scale(v[0], 3.0);
                t.cross_entropy(scaled, &[1, 0, 4, 2], Some(0)).unwrap()
            });
        }
    }
}
