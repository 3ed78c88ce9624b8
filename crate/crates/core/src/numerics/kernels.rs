//! Slice-level kernels shared by the value-level ops and the tape.
//!
//! All kernels use a fixed summation order so results are bit-reproducible.

use super::Scalar;

pub(crate) fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = F::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    let pairs = [
        acc[0] + acc[4],
        acc[1] + acc[5],
        acc[2] + acc[6],
        acc[3] + acc[7],
    ];
    (pairs[0] + pairs[2]) + (pairs[1] + pairs[3]) + tail
}

#[inline]
fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[m×p] += a[m×n] · b[n×p]`
pub(crate) fn matmul_acc<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, n: usize, p: usize) {
    for i in 0..m {
        let orow = &mut out[i * p..(i + 1) * p];
        for k in 0..n {
            axpy(a[i * n + k], &b[k * p..(k + 1) * p], orow);
        }
    }
}

/// `out[m×p] += a[m×n] · b[p×n]ᵀ`
pub(crate) fn matmul_bt_acc<F: Scalar>(
    a: &[F],
    b: &[F],
    out: &mut [F],
    m: usize,
    n: usize,
    p: usize,
) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..p {
            out[i * p + j] += dot(arow, &b[j * n..(j + 1) * n]);
        }
    }
}

/// `out[n×p] += a[m×n]ᵀ · c[m×p]`
pub(crate) fn matmul_at_acc<F: Scalar>(
    a: &[F],
    c: &[F],
    out: &mut [F],
    m: usize,
    n: usize,
    p: usize,
) {
    for i in 0..m {
        let crow = &c[i * p..(i + 1) * p];
        for k in 0..n {
            axpy(a[i * n + k], crow, &mut out[k * p..(k + 1) * p]);
        }
    }
}

/// Numerically stable softmax of every `d`-wide row, in place.
pub(crate) fn softmax_rows<F: Scalar>(x: &mut [F], d: usize) {
    for row in x.chunks_mut(d) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut total = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
}

/// Backward of a row softmax: `dx = y ⊙ (dy − Σ y·dy)`, accumulated.
pub(crate) fn softmax_rows_backward<F: Scalar>(y: &[F], dy: &[F], dx: &mut [F], d: usize) {
    for ((yr, dyr), dxr) in y.chunks(d).zip(dy.chunks(d)).zip(dx.chunks_mut(d)) {
        let inner = dot(yr, dyr);
        for ((dxi, &yi), &dyi) in dxr.iter_mut().zip(yr).zip(dyr) {
            *dxi += yi * (dyi - inner);
        }
    }
}

/// Row-wise normalization; returns `(xhat, inv_std)` for the backward pass.
pub(crate) fn layer_norm_rows<F: Scalar>(
    x: &[F],
    gain: &[F],
    bias: &[F],
    eps: F,
    out: &mut [F],
) -> (Vec<F>, Vec<F>) {
    let d = gain.len();
    let dn = F::lit(d as f64);
    let mut xhat = vec![F::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(x.len() / d);
    for (r, row) in x.chunks(d).enumerate() {
        let mean = row.iter().copied().sum::<F>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / dn;
        let is = F::one() / (var + eps).sqrt();
        inv_std.push(is);
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gain[j] + bias[j];
        }
    }
    (xhat, inv_std)
}

/// Scaled dot-product attention over `[batch, len, heads·head_dim]` rows.
///
/// Keys whose mask entry is false receive zero weight. Returns the attention
/// probabilities laid out as `[batch, heads, len, len]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_forward<F: Scalar>(
    q: &[F],
    k: &[F],
    v: &[F],
    key_mask: &[bool],
    batch: usize,
    len: usize,
    heads: usize,
    width: usize,
    out: &mut [F],
) -> Vec<F> {
    let hd = width / heads;
    let scale = F::one() / F::lit(hd as f64).sqrt();
    let mut probs = vec![F::zero(); batch * heads * len * len];
    let mut scores = vec![F::zero(); len];
    for b in 0..batch {
        for h in 0..heads {
            let off = h * hd;
            for i in 0..len {
                let qi = &q[(b * len + i) * width + off..][..hd];
                let mut max = F::neg_infinity();
                for j in 0..len {
                    if key_mask[b * len + j] {
                        let kj = &k[(b * len + j) * width + off..][..hd];
                        scores[j] = dot(qi, kj) * scale;
                        max = max.max(scores[j]);
                    }
                }
                let mut total = F::zero();
                for j in 0..len {
                    scores[j] = if key_mask[b * len + j] {
                        (scores[j] - max).exp()
                    } else {
                        F::zero()
                    };
                    total += scores[j];
                }
                let prow = &mut probs[((b * heads + h) * len + i) * len..][..len];
                let orow = &mut out[(b * len + i) * width + off..][..hd];
                for j in 0..len {
                    let p = scores[j] / total;
                    prow[j] = p;
                    if p != F::zero() {
                        axpy(p, &v[(b * len + j) * width + off..][..hd], orow);
                    }
                }
            }
        }
    }
    probs
}

/// Gradients of [`attention_forward`] with respect to q, k and v, accumulated.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<F: Scalar>(
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    dout: &[F],
    batch: usize,
    len: usize,
    heads: usize,
    width: usize,
    dq: &mut [F],
    dk: &mut [F],
    dv: &mut [F],
) {
    let hd = width / heads;
    let scale = F::one() / F::lit(hd as f64).sqrt();
    let mut dp = vec![F::zero(); len];
    for b in 0..batch {
        for h in 0..heads {
            let off = h * hd;
            for i in 0..len {
                let prow = &probs[((b * heads + h) * len + i) * len..][..len];
                let doi = &dout[(b * len + i) * width + off..][..hd];
                let mut inner = F::zero();
                for j in 0..len {
                    if prow[j] != F::zero() {
                        let vj = &v[(b * len + j) * width + off..][..hd];
                        dp[j] = dot(doi, vj);
                        inner += prow[j] * dp[j];
                        axpy(prow[j], doi, &mut dv[(b * len + j) * width + off..][..hd]);
                    }
                }
                let qi_start = (b * len + i) * width + off;
                for j in 0..len {
                    if prow[j] == F::zero() {
                        continue;
                    }
                    let ds = prow[j] * (dp[j] - inner) * scale;
                    let kj_start = (b * len + j) * width + off;
                    axpy(ds, &k[kj_start..kj_start + hd], &mut dq[qi_start..qi_start + hd]);
                    axpy(ds, &q[qi_start..qi_start + hd], &mut dk[kj_start..kj_start + hd]);
                }
            }
        }
    }
}

/// Mean negative log-likelihood over non-ignored rows.
///
/// Returns `(loss, probabilities, counted_rows)`.
pub(crate) fn cross_entropy_forward<F: Scalar>(
    logits: &[F],
    classes: usize,
    targets: &[u32],
    ignore: Option<u32>,
) -> (F, Vec<F>, usize) {
    let mut probs = logits.to_vec();
    softmax_rows(&mut probs, classes);
    let mut total = F::zero();
    let mut count = 0;
    for (r, &t) in targets.iter().enumerate() {
        if Some(t) == ignore {
            continue;
        }
        let row = &logits[r * classes..(r + 1) * classes];
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = row.iter().map(|&z| (z - max).exp()).sum::<F>().ln() + max;
        total += lse - row[t as usize];
        count += 1;
    }
    (total / F::lit(count.max(1) as f64), probs, count)
}
