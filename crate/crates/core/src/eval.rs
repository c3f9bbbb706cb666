//! Accuracy and recall@k.

use crate::error::{Error, Result};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Fraction of positions where `predictions` equals `gold`.
pub fn accuracy(predictions: &[usize], gold: &[usize]) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(Error::InvalidInput(format!(
            "accuracy: {} predictions vs {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::InvalidInput("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// One scored instance for ranking metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredInstance {
    pub score: f64,
    pub positive: bool,
}

/// Share of all gold positives found among the `k` highest scores.
///
/// Equal scores keep their input order.
pub fn recall_at_k(scores: &[ScoredInstance], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidInput("recall@k needs k >= 1".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite score {}",
            bad.score
        )));
    }
    let total = scores.iter().filter(|s| s.positive).count();
    if total == 0 {
        return Err(Error::InvalidInput(
            "recall@k is undefined without gold positives".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps input order among ties.
    order.sort_by(|&a, &b| scores[b].score.total_cmp(&scores[a].score));
    let found = order
        .iter()
        .take(k)
        .filter(|&&i| scores[i].positive)
        .count();
    Ok(found as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0, 1], &[0, 1, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 1], &[0, 1, 1, 0]).unwrap(), 0.75);
        assert!(accuracy(&[0], &[0, 1]).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    fn scored(pairs: &[(f64, bool)]) -> Vec<ScoredInstance> {
        pairs
            .iter()
            .map(|&(score, positive)| ScoredInstance { score, positive })
            .collect()
    }

    #[test]
    fn recall_examples() {
        let s = scored(&[(0.9, true), (0.1, false), (0.5, true)]);
        assert_eq!(recall_at_k(&s, 3).unwrap(), 1.0);
        assert_eq!(recall_at_k(&s, 10).unwrap(), 1.0);
        let adversarial = scored(&[
            (0.1, true),
            (0.2, true),
            (0.8, false),
            (0.9, false),
            (0.7, false),
        ]);
        assert_eq!(recall_at_k(&adversarial, 3).unwrap(), 0.0);
        assert!(recall_at_k(&scored(&[(0.3, false)]), 1).is_err());
        assert!(recall_at_k(&s, 0).is_err());
    }

    #[test]
    fn recall_ties_use_input_order() {
        let s = scored(&[(0.5, false), (0.5, true)]);
        assert_eq!(recall_at_k(&s, 1).unwrap(), 0.0);
        let s = scored(&[(0.5, true), (0.5, false)]);
        assert_eq!(recall_at_k(&s, 1).unwrap(), 1.0);
    }

    /// Naive oracle: for each instance count how many items outrank it.
    fn naive_recall(s: &[ScoredInstance], k: usize) -> f64 {
        let total = s.iter().filter(|x| x.positive).count();
        let mut found = 0;
        for (i, x) in s.iter().enumerate() {
            let rank = s
                .iter()
                .enumerate()
                .filter(|&(j, y)| y.score > x.score || (y.score == x.score && j < i))
                .count();
            if rank < k && x.positive {
                found += 1;
            }
        }
        found as f64 / total as f64
    }

    #[test]
    fn recall_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let s: Vec<ScoredInstance> = (0..20)
                .map(|_| ScoredInstance {
                    score: (rng.gen_range(0..8) as f64) * 0.25,
                    positive: rng.gen_bool(0.4),
                })
                .collect();
            if !s.iter().any(|x| x.positive) {
                continue;
            }
            for k in 1..=22 {
                assert_eq!(recall_at_k(&s, k).unwrap(), naive_recall(&s, k));
            }
        }
    }

    proptest! {
        #[test]
        fn recall_monotone_in_k(
            items in proptest::collection::vec((-5.0f64..5.0, any::<bool>()), 1..30),
        ) {
            let s = scored(&items);
            prop_assume!(s.iter().any(|x| x.positive));
            let mut prev = 0.0;
            for k in 1..=s.len() + 1 {
                let r = recall_at_k(&s, k).unwrap();
                prop_assert!(r >= prev);
                prop_assert!((0.0..=1.0).contains(&r));
                prev = r;
            }
        }

        #[test]
        fn accuracy_permutation_invariant(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..30),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let (p, g): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (ps, gs): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            prop_assert_eq!(accuracy(&p, &g).unwrap(), accuracy(&ps, &gs).unwrap());
        }
    }
}
