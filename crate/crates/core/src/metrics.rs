//! Word error rate and descriptive statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Transcript;

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Edit errors against a reference length. `wer` may exceed 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WerScore {
    pub errors: usize,
    pub ref_len: usize,
    pub wer: f64,
}

impl WerScore {
    /// Pools scores the usual way: total errors over total reference words.
    pub fn pooled<I: IntoIterator<Item = WerScore>>(scores: I) -> Result<WerScore> {
        let (errors, ref_len) = scores
            .into_iter()
            .fold((0, 0), |(e, n), s| (e + s.errors, n + s.ref_len));
        if ref_len == 0 {
            return Err(Error::Precondition("no reference words to score".into()));
        }
        Ok(WerScore {
            errors,
            ref_len,
            wer: errors as f64 / ref_len as f64,
        })
    }
}

pub fn wer(reference: &Transcript, hypothesis: &Transcript) -> Result<WerScore> {
    if reference.is_empty() {
        return Err(Error::Precondition("WER needs a non-empty reference".into()));
    }
    let errors = edit_distance(reference.tokens(), hypothesis.tokens());
    Ok(WerScore {
        errors,
        ref_len: reference.len(),
        wer: errors as f64 / reference.len() as f64,
    })
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Population standard deviation (divides by n).
pub fn std_dev(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt())
}

/// Excess kurtosis `m4 / m2^2 - 3` with biased central moments.
pub fn excess_kurtosis(samples: &[f64]) -> Result<f64> {
    if samples.len() < 4 {
        return Err(Error::UndefinedStatistic("kurtosis needs at least 4 samples"));
    }
    let n = samples.len() as f64;
    let m = samples.iter().sum::<f64>() / n;
    let (m2, m4) = samples.iter().fold((0.0, 0.0), |(m2, m4), x| {
        let d2 = (x - m).powi(2);
        (m2 + d2, m4 + d2 * d2)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    // Variance at the rounding floor of the mean counts as zero.
    if m2 <= (f64::EPSILON * m).powi(2) {
        return Err(Error::UndefinedStatistic("kurtosis of a zero-variance sample"));
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn t(tokens: &[usize]) -> Transcript {
        Transcript::new(tokens.to_vec()).unwrap()
    }

    /// Plain recursive definition of edit distance.
    fn brute_distance(a: &[u8], b: &[u8]) -> usize {
        match (a, b) {
            ([], _) => b.len(),
            (_, []) => a.len(),
            ([x, ra @ ..], [y, rb @ ..]) => {
                let sub = brute_distance(ra, rb) + usize::from(x != y);
                let del = brute_distance(ra, b) + 1;
                let ins = brute_distance(a, rb) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance(b"abc", b"abc"), 0);
        assert_eq!(edit_distance(b"kitten", b"sitting"), 3);
        assert_eq!(edit_distance(&["a", "b"], &[]), 2);
    }

    #[test]
    fn wer_examples() {
        let s = wer(&t(&[1, 2, 3]), &t(&[1, 9, 3])).unwrap();
        assert_eq!(s.errors, 1);
        assert!((s.wer - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(wer(&t(&[4, 5]), &t(&[4, 5])).unwrap().wer, 0.0);
        assert_eq!(wer(&t(&[1]), &t(&[2, 3])).unwrap().wer, 2.0);
        assert!(matches!(wer(&t(&[]), &t(&[1])), Err(Error::Precondition(_))));
    }

    #[test]
    fn pooled_wer_weights_by_reference_length() {
        let a = wer(&t(&[1, 2, 3, 4]), &t(&[1, 2, 3, 4])).unwrap();
        let b = wer(&t(&[1]), &t(&[2])).unwrap();
        let p = WerScore::pooled([a, b]).unwrap();
        assert_eq!((p.errors, p.ref_len), (1, 5));
        assert!((p.wer - 0.2).abs() < 1e-15);
    }

    #[test]
    fn kurtosis_of_uniform_and_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let uniform: Vec<f64> = (0..100_000).map(|_| rng.gen::<f64>()).collect();
        assert!((excess_kurtosis(&uniform).unwrap() + 1.2).abs() < 0.05);
        let normal: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        assert!(excess_kurtosis(&normal).unwrap().abs() < 0.1);
    }

    #[test]
    fn kurtosis_degenerate_inputs() {
        assert!(matches!(
            excess_kurtosis(&[3.0; 10]),
            Err(Error::UndefinedStatistic(_))
        ));
        assert!(excess_kurtosis(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn population_std() {
        assert_eq!(std_dev(&[0.0, 2.0]), Some(1.0));
        assert_eq!(std_dev(&[]), None);
    }

    proptest! {
        #[test]
        fn matches_recursive_oracle(a in prop::collection::vec(0u8..3, 0..=6),
                                    b in prop::collection::vec(0u8..3, 0..=6)) {
            prop_assert_eq!(edit_distance(&a, &b), brute_distance(&a, &b));
        }

        #[test]
        fn is_a_metric(a in prop::collection::vec(0u8..4, 0..8),
                       b in prop::collection::vec(0u8..4, 0..8),
                       c in prop::collection::vec(0u8..4, 0..8)) {
            prop_assert_eq!(edit_distance(&a, &a), 0);
            prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
            prop_assert_eq!(edit_distance(&a, &b) == 0, a == b);
            prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        }

        #[test]
        fn wer_ignores_relabelling(r in prop::collection::vec(1usize..6, 1..8),
                                   h in prop::collection::vec(1usize..6, 0..8),
                                   shift in 1usize..50) {
            // x -> x + shift is a bijection of the positive token ids onto their image.
            let relabel = |v: &[usize]| t(&v.iter().map(|x| x + shift).collect::<Vec<_>>());
            let base = wer(&t(&r), &t(&h)).unwrap();
            let moved = wer(&relabel(&r), &relabel(&h)).unwrap();
            prop_assert_eq!(base, moved);
        }
    }
}
