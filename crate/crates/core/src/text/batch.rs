use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{TextError, EOS, PAD};

/// Padded `batch × len` id matrix with its validity mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    /// Row-major ids; PAD wherever `mask` is false.
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
    pub batch: usize,
    pub len: usize,
    /// Position of each row in the list the batch was assembled from.
    pub rows: Vec<usize>,
}

impl TokenBatch {
    pub fn row(&self, r: usize) -> &[u32] {
        &self.ids[r * self.len..(r + 1) * self.len]
    }

    /// The real (unpadded) ids of row `r`.
    pub fn real(&self, r: usize) -> &[u32] {
        &self.row(r)[..self.lengths[r]]
    }

    /// The same rows padded to `len` columns.
    pub fn padded_to(&self, len: usize) -> TokenBatch {
        assert!(len >= self.len, "cannot shrink a batch");
        let lists: Vec<Vec<u32>> = (0..self.batch).map(|r| self.real(r).to_vec()).collect();
        let mut b = assemble_rows(&lists, len);
        b.rows = self.rows.clone();
        b
    }
}

fn assemble_rows(lists: &[Vec<u32>], len: usize) -> TokenBatch {
    let batch = lists.len();
    let mut ids = vec![PAD; batch * len];
    let mut mask = vec![false; batch * len];
    let mut lengths = Vec::with_capacity(batch);
    for (r, seq) in lists.iter().enumerate() {
        ids[r * len..r * len + seq.len()].copy_from_slice(seq);
        mask[r * len..r * len + seq.len()].iter_mut().for_each(|m| *m = true);
        lengths.push(seq.len());
    }
    TokenBatch {
        ids,
        mask,
        lengths,
        batch,
        len,
        rows: (0..batch).collect(),
    }
}

/// Builds one batch from `id_lists[indices]`, truncating sequences longer than
/// `max_len` (the final kept position becomes EOS) and padding to the longest
/// remaining row.
pub fn assemble_batch(id_lists: &[Vec<u32>], indices: &[usize], max_len: usize) -> TokenBatch {
    let lists: Vec<Vec<u32>> = indices
        .iter()
        .map(|&i| {
            let seq = &id_lists[i];
            if seq.len() > max_len {
                let mut cut = seq[..max_len].to_vec();
                cut[max_len - 1] = EOS;
                cut
            } else {
                seq.clone()
            }
        })
        .collect();
    let len = lists.iter().map(Vec::len).max().unwrap_or(0);
    let mut b = assemble_rows(&lists, len);
    b.rows = indices.to_vec();
    b
}

/// Splits `0..n` into consecutive chunks of `batch_size`, after a seeded
/// shuffle when `seed` is given. The last chunk may be smaller.
pub fn batch_order(n: usize, batch_size: usize, seed: Option<u64>) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

pub fn make_batches(
    id_lists: &[Vec<u32>],
    batch_size: usize,
    max_len: usize,
    shuffle_seed: Option<u64>,
) -> Result<Vec<TokenBatch>, TextError> {
    if batch_size < 1 || max_len < 2 {
        return Err(TextError::BatchParams(format!(
            "batch_size must be >= 1 and max_len >= 2 (got {batch_size}, {max_len})"
        )));
    }
    Ok(batch_order(id_lists.len(), batch_size, shuffle_seed)
        .iter()
        .map(|idx| assemble_batch(id_lists, idx, max_len))
        .collect())
}
