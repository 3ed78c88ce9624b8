use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TextError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Line-aligned sentence pairs with a split label per pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelCorpus {
    pub pairs: Vec<(String, String)>,
    pub splits: Vec<Split>,
}

impl ParallelCorpus {
    /// All pairs labelled as training data.
    pub fn new(pairs: Vec<(String, String)>) -> Self {
        let splits = vec![Split::Train; pairs.len()];
        Self { pairs, splits }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Relabels a deterministic `fraction` of the pairs as validation data.
    pub fn with_validation_split(mut self, fraction: f64, seed: u64) -> Self {
        let (_, valid) = split_indices(self.len(), fraction, seed);
        self.splits = vec![Split::Train; self.len()];
        for i in valid {
            self.splits[i] = Split::Valid;
        }
        self
    }

    pub fn split(&self, which: Split) -> Vec<&(String, String)> {
        self.pairs
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == which)
            .map(|(p, _)| p)
            .collect()
    }

    pub fn sources(&self) -> Vec<&str> {
        self.pairs.iter().map(|(s, _)| s.as_str()).collect()
    }

    pub fn targets(&self) -> Vec<&str> {
        self.pairs.iter().map(|(_, t)| t.as_str()).collect()
    }
}

/// Deterministically partitions `0..n` into `(train, valid)` index lists,
/// both sorted. At least one item stays in training when `n > 0`.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_valid = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let mut valid = order[..n_valid].to_vec();
    let mut train = order[n_valid..].to_vec();
    valid.sort_unstable();
    train.sort_unstable();
    (train, valid)
}

/// Reads one sentence per line. CRLF is accepted and trailing blank lines
/// are dropped; a blank line before the end is an error.
pub fn read_sentences(path: &Path) -> Result<Vec<String>, TextError> {
    let bytes = fs::read(path).map_err(|source| TextError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut lines = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw).map_err(|_| TextError::Encoding {
            path: path.to_owned(),
            line: i + 1,
        })?;
        lines.push(line.to_owned());
    }
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    if let Some(i) = lines.iter().position(|l| l.trim().is_empty()) {
        return Err(TextError::EmptyLine {
            path: path.to_owned(),
            line: i + 1,
        });
    }
    Ok(lines)
}

/// Pairs line `i` of `source_path` with line `i` of `target_path`.
pub fn load_parallel_corpus(source_path: &Path, target_path: &Path) -> Result<ParallelCorpus, TextError> {
    let src = read_sentences(source_path)?;
    let tgt = read_sentences(target_path)?;
    if src.len() != tgt.len() {
        return Err(TextError::Alignment {
            source_lines: src.len(),
            target_lines: tgt.len(),
        });
    }
    Ok(ParallelCorpus::new(src.into_iter().zip(tgt).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, content: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, content).unwrap();
        p
    }

    #[test]
    fn aligned_files_pair_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s", b"a\nb\nc\n");
        let t = write(dir.path(), "t", b"x\r\ny\r\nz");
        let c = load_parallel_corpus(&s, &t).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.pairs[1], ("b".to_string(), "y".to_string()));
        assert!(c.splits.iter().all(|&s| s == Split::Train));
    }

    #[test]
    fn misaligned_files_report_both_counts() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s", b"a\nb\nc\n");
        let t = write(dir.path(), "t", b"a\nb\nc\nd\n");
        let err = load_parallel_corpus(&s, &t).unwrap_err();
        assert!(matches!(err, TextError::Alignment { source_lines: 3, target_lines: 4 }));
        assert!(err.to_string().contains("3") && err.to_string().contains("4"));
    }

    #[test]
    fn trailing_newlines_add_no_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s", b"a\nb\n\n\n");
        let t = write(dir.path(), "t", b"x\ny\n");
        assert_eq!(load_parallel_corpus(&s, &t).unwrap().len(), 2);
    }

    #[test]
    fn encoding_error_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s", b"ok\n\xff\xfe\n");
        let err = read_sentences(&s).unwrap_err();
        assert!(matches!(err, TextError::Encoding { line: 2, .. }));
    }

    #[test]
    fn interior_blank_line_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s", b"a\n\nb\n");
        assert!(matches!(read_sentences(&s), Err(TextError::EmptyLine { line: 2, .. })));
    }

    #[test]
    fn validation_split_is_deterministic() {
        let pairs: Vec<_> = (0..50).map(|i| (i.to_string(), i.to_string())).collect();
        let a = ParallelCorpus::new(pairs.clone()).with_validation_split(0.1, 3);
        let b = ParallelCorpus::new(pairs).with_validation_split(0.1, 3);
        assert_eq!(a, b);
        assert_eq!(a.split(Split::Valid).len(), 5);
        assert_eq!(a.split(Split::Train).len(), 45);
    }
}
