use std::collections::HashMap;
use std::hash::Hash;

use super::EvalError;

/// Corpus-level BLEU with its components.
#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    pub score: f64,
    /// Clipped precision for each order `1..=max_n`.
    pub precisions: Vec<f64>,
    /// Clipped n-gram matches per order, pooled over the corpus.
    pub matches: Vec<usize>,
    /// Candidate n-gram counts per order, pooled over the corpus.
    pub totals: Vec<usize>,
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// `(clipped matches, candidate n-grams)` of one pair at order `n`.
fn clipped<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let matches = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, candidate.len().saturating_sub(n - 1))
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c > r {
        1.0
    } else if c == 0 {
        0.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

/// Corpus BLEU with one reference per candidate.
///
/// Clipped n-gram matches and candidate n-gram counts are pooled over the
/// corpus before dividing. The score is zero when any order has no match;
/// an empty candidate simply contributes nothing. With no candidate tokens
/// at all the brevity penalty is reported as 0.
pub fn bleu<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> Result<BleuReport, EvalError> {
    if candidates.len() != references.len() {
        return Err(EvalError::Length {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if max_n == 0 {
        return Err(EvalError::Order);
    }
    if let Some(i) = references.iter().position(Vec::is_empty) {
        return Err(EvalError::EmptyReference { index: i });
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    for (c, r) in candidates.iter().zip(references) {
        for n in 1..=max_n {
            let (m, t) = clipped(c, r, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    let precisions: Vec<f64> = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
        .collect();
    let candidate_len = candidates.iter().map(Vec::len).sum();
    let reference_len = references.iter().map(Vec::len).sum();
    let bp = brevity_penalty(candidate_len, reference_len);
    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        bp * (precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64).exp()
    };
    Ok(BleuReport {
        score,
        precisions,
        matches,
        totals,
        brevity_penalty: bp,
        candidate_len,
        reference_len,
    })
}

/// Sentence BLEU for report rows.
///
/// Only orders for which the candidate has n-grams are averaged. A zero
/// match count at order 2 or higher is replaced by 0.5; a zero unigram
/// match count gives 0.
pub fn sentence_bleu_smoothed<T: Eq + Hash>(candidate: &[T], reference: &[T], max_n: usize) -> f64 {
    let orders = max_n.min(candidate.len());
    if orders == 0 || reference.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let (m, t) = clipped(candidate, reference, n);
        let m = match (m, n) {
            (0, 1) => return 0.0,
            (0, _) => 0.5,
            (m, _) => m as f64,
        };
        log_sum += (m / t as f64).ln();
    }
    brevity_penalty(candidate.len(), reference.len()) * (log_sum / orders as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_corpus_scores_one() {
        let c = vec![toks("the cat sat on the mat"), toks("a dog runs fast today")];
        let r = bleu(&c, &c, 4).unwrap();
        assert_eq!(r.score, 1.0);
        assert_eq!(r.brevity_penalty, 1.0);
    }

    #[test]
    fn no_unigram_overlap_scores_zero() {
        let r = bleu(&[toks("a b c d")], &[toks("e f g h")], 4).unwrap();
        assert_eq!(r.score, 0.0);
        assert_eq!(r.precisions[0], 0.0);
    }

    #[test]
    fn clipping_example() {
        let r = bleu(&[toks("the the the")], &[toks("the cat")], 4).unwrap();
        assert_eq!(r.precisions[0], 1.0 / 3.0);
        assert_eq!(r.precisions[1], 0.0);
        assert_eq!(r.score, 0.0);
        assert_eq!(r.brevity_penalty, 1.0);
    }

    #[test]
    fn brevity_penalty_for_short_output() {
        let r = bleu(&[toks("a b c d")], &[toks("a b c d e f g h")], 4).unwrap();
        assert!((r.brevity_penalty - (-1.0f64).exp()).abs() < 1e-15);
        assert!((r.score - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn errors_and_empty_candidates() {
        assert!(matches!(bleu(&[toks("a")], &[], 4), Err(EvalError::Length { .. })));
        assert!(matches!(bleu(&[toks("a")], &[vec![]], 4), Err(EvalError::EmptyReference { index: 0 })));
        let r = bleu(&[vec![], toks("a b c d")], &[toks("x y"), toks("a b c d")], 4).unwrap();
        assert!(r.score > 0.0 && r.score < 1.0);
        let r = bleu(&[Vec::<&str>::new()], &[toks("x")], 4).unwrap();
        assert_eq!((r.score, r.candidate_len), (0.0, 0));
    }

    #[test]
    fn smoothed_sentence_cases() {
        assert_eq!(sentence_bleu_smoothed(&toks("a b c d e"), &toks("a b c d e"), 4), 1.0);
        assert_eq!(sentence_bleu_smoothed(&toks("cat"), &toks("cat"), 4), 1.0);
        // p1 = 2/3, p2 = 1/2, p3 = 0 -> 0.5/1; equal lengths so BP = 1.
        let got = sentence_bleu_smoothed(&toks("a b x"), &toks("a b c"), 4);
        let want = ((2.0f64 / 3.0).ln() + 0.5f64.ln() + 0.5f64.ln()) / 3.0;
        assert!((got - want.exp()).abs() < 1e-15);
        assert_eq!(sentence_bleu_smoothed(&toks("x y"), &toks("a b"), 4), 0.0);
        assert_eq!(sentence_bleu_smoothed::<&str>(&[], &toks("a"), 4), 0.0);
    }

    fn corpus() -> impl Strategy<Value = Vec<(Vec<u8>, Vec<u8>)>> {
        prop::collection::vec(
            (prop::collection::vec(0u8..6, 0..8), prop::collection::vec(0u8..6, 1..8)),
            1..6,
        )
    }

    proptest! {
        #[test]
        fn pair_order_does_not_matter(pairs in corpus(), rot in 0usize..6) {
            let (c, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let mut shuffled = pairs.clone();
            let n = shuffled.len();
            shuffled.rotate_left(rot % n);
            shuffled.reverse();
            let (c2, r2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            prop_assert_eq!(bleu(&c, &r, 4).unwrap(), bleu(&c2, &r2, 4).unwrap());
        }

        #[test]
        fn adding_a_correct_pair_never_lowers_the_score(pairs in corpus(), extra in prop::collection::vec(0u8..6, 4..8)) {
            let (mut c, mut r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let before = bleu(&c, &r, 4).unwrap().score;
            c.push(extra.clone());
            r.push(extra);
            prop_assert!(bleu(&c, &r, 4).unwrap().score >= before);
        }

        #[test]
        fn score_and_penalty_stay_in_range(pairs in corpus()) {
            let (c, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let rep = bleu(&c, &r, 4).unwrap();
            prop_assert!((0.0..=1.0).contains(&rep.score));
            prop_assert!(rep.brevity_penalty <= 1.0);
            prop_assert!(rep.brevity_penalty > 0.0 || rep.candidate_len == 0);
        }
    }
}
