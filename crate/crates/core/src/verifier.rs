//! Best-of-N selection over four-dimensional score vectors.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ScoreVector;

/// Weights over (alignment, aesthetics, plausibility, overall).
/// Ties on the aggregate go to the higher overall score, then the lower index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    weights: [f64; 4],
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        Self { weights: [0.25; 4] }
    }
}

impl SelectionPolicy {
    pub fn new(weights: [f64; 4]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!("weights must be nonnegative, got {weights:?}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("weights must sum to 1, got {sum}")));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> [f64; 4] {
        self.weights
    }
}

pub fn aggregate(s: &ScoreVector, p: &SelectionPolicy) -> f64 {
    s.as_array().iter().zip(p.weights).map(|(v, w)| v * w).sum()
}

fn better(a: (f64, f64, usize), b: (f64, f64, usize)) -> Ordering {
    // descending aggregate, descending overall, ascending index
    b.0.total_cmp(&a.0)
        .then(b.1.total_cmp(&a.1))
        .then(a.2.cmp(&b.2))
}

fn keyed(candidates: &[ScoreVector], p: &SelectionPolicy) -> Result<Vec<(f64, f64, usize)>> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidates to select from".into()));
    }
    for c in candidates {
        c.validate()?;
    }
    Ok(candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (aggregate(c, p), c.overall, i))
        .collect())
}

/// Candidate indices, best first.
pub fn rank_candidates(candidates: &[ScoreVector], p: &SelectionPolicy) -> Result<Vec<usize>> {
    let mut keys = keyed(candidates, p)?;
    keys.sort_by(|a, b| better(*a, *b));
    Ok(keys.into_iter().map(|k| k.2).collect())
}

pub fn select_best(candidates: &[ScoreVector], p: &SelectionPolicy) -> Result<usize> {
    let keys = keyed(candidates, p)?;
    Ok(keys
        .into_iter()
        .min_by(|a, b| better(*a, *b))
        .map(|k| k.2)
        .expect("nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sv(a: f64, b: f64, c: f64, d: f64) -> ScoreVector {
        ScoreVector::new(a, b, c, d).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let uniform = SelectionPolicy::default();
        assert!((aggregate(&ScoreVector::uniform(0.8).unwrap(), &uniform) - 0.8).abs() < 1e-15);
        assert_eq!(aggregate(&sv(1.0, 0.0, 0.0, 0.0), &uniform), 0.25);
        let overall = SelectionPolicy::new([0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(aggregate(&sv(0.1, 0.2, 0.3, 0.4), &overall), 0.4);
    }

    #[test]
    fn policy_validation() {
        assert!(SelectionPolicy::new([0.5, 0.5, 0.1, 0.0]).is_err());
        assert!(SelectionPolicy::new([1.5, -0.5, 0.0, 0.0]).is_err());
        assert!(SelectionPolicy::new([0.1, 0.2, 0.3, 0.4]).is_ok());
    }

    #[test]
    fn selection_examples() {
        let p = SelectionPolicy::default();
        assert_eq!(select_best(&[sv(0.1, 0.2, 0.3, 0.4)], &p).unwrap(), 0);
        let c = [ScoreVector::uniform(0.7).unwrap(), ScoreVector::uniform(0.9).unwrap()];
        assert_eq!(select_best(&c, &p).unwrap(), 1);
        assert!(select_best(&[], &p).is_err());
        assert!(rank_candidates(&[], &p).is_err());
    }

    #[test]
    fn tie_rules() {
        let p = SelectionPolicy::default();
        // same aggregate 0.5; the higher overall wins, then the lower index
        let c = [sv(0.6, 0.6, 0.4, 0.4), sv(0.4, 0.4, 0.6, 0.6), sv(0.6, 0.4, 0.4, 0.6)];
        assert_eq!(rank_candidates(&c, &p).unwrap(), vec![1, 2, 0]);
        assert_eq!(select_best(&c, &p).unwrap(), 1);
        let same = [ScoreVector::uniform(0.5).unwrap(); 3];
        assert_eq!(rank_candidates(&same, &p).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn sorted_and_reversed_inputs() {
        let p = SelectionPolicy::default();
        let sorted: Vec<_> = (0..5).map(|i| ScoreVector::uniform(1.0 - 0.1 * i as f64).unwrap()).collect();
        assert_eq!(rank_candidates(&sorted, &p).unwrap(), vec![0, 1, 2, 3, 4]);
        let reversed: Vec<_> = sorted.iter().rev().copied().collect();
        assert_eq!(rank_candidates(&reversed, &p).unwrap(), vec![4, 3, 2, 1, 0]);
    }

    fn arb_scores() -> impl Strategy<Value = ScoreVector> {
        // coarse grid so that ties actually occur
        proptest::array::uniform4(0u8..=4).prop_map(|a| {
            let f = |v: u8| v as f64 / 4.0;
            sv(f(a[0]), f(a[1]), f(a[2]), f(a[3]))
        })
    }

    proptest! {
        #[test]
        fn select_matches_brute_force(c in proptest::collection::vec(arb_scores(), 1..17)) {
            let p = SelectionPolicy::default();
            let mut best = 0;
            for i in 1..c.len() {
                let (ai, ab) = (aggregate(&c[i], &p), aggregate(&c[best], &p));
                if ai > ab || (ai == ab && c[i].overall > c[best].overall) {
                    best = i;
                }
            }
            prop_assert_eq!(select_best(&c, &p).unwrap(), best);
            prop_assert_eq!(rank_candidates(&c, &p).unwrap()[0], best);
        }

        #[test]
        fn ranking_is_a_permutation(c in proptest::collection::vec(arb_scores(), 1..17)) {
            let mut r = rank_candidates(&c, &SelectionPolicy::default()).unwrap();
            r.sort_unstable();
            prop_assert_eq!(r, (0..c.len()).collect::<Vec<_>>());
        }

        #[test]
        fn permutation_equivariance(c in proptest::collection::vec(arb_scores(), 1..10), rot in 0usize..10) {
            // with distinct (aggregate, overall) keys the winner follows the permutation
            let p = SelectionPolicy::new([0.1, 0.2, 0.3, 0.4]).unwrap();
            let keys: Vec<_> = c.iter().map(|s| (aggregate(s, &p), s.overall)).collect();
            let distinct = keys.iter().enumerate().all(|(i, a)| keys[..i].iter().all(|b| a != b));
            prop_assume!(distinct);
            let rot = rot % c.len();
            let mut moved = c.clone();
            moved.rotate_left(rot);
            let before = select_best(&c, &p).unwrap();
            let after = select_best(&moved, &p).unwrap();
            prop_assert_eq!((after + rot) % c.len(), before);
        }
    }
}
