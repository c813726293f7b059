use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::EntityTriplet;

/// Micro-averaged precision, recall and F1.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(tp: usize, n_pred: usize, n_gold: usize) -> Self {
        let precision = if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 };
        let recall = if n_gold == 0 { 0.0 } else { tp as f64 / n_gold as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

/// One-to-one matches between two multisets.
fn multiset_matches<K: Eq + Hash>(pred: impl Iterator<Item = K>, gold: impl Iterator<Item = K>) -> usize {
    let mut remaining: HashMap<K, usize> = HashMap::new();
    for g in gold {
        *remaining.entry(g).or_default() += 1;
    }
    let mut tp = 0;
    for p in pred {
        if let Some(c) = remaining.get_mut(&p) {
            if *c > 0 {
                *c -= 1;
                tp += 1;
            }
        }
    }
    tp
}

fn score<K: Eq + Hash>(
    pred: &[Vec<EntityTriplet>],
    gold: &[Vec<EntityTriplet>],
    key: impl Fn(&EntityTriplet) -> K,
) -> Prf {
    assert_eq!(pred.len(), gold.len(), "prediction and gold sentence counts differ");
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        tp += multiset_matches(p.iter().map(&key), g.iter().map(&key));
        np += p.len();
        ng += g.len();
    }
    Prf::from_counts(tp, np, ng)
}

/// Exact `(start, end, type)` matching.
pub fn span_f1(pred: &[Vec<EntityTriplet>], gold: &[Vec<EntityTriplet>]) -> Prf {
    score(pred, gold, |e| *e)
}

/// Type-agnostic `(start, end)` matching.
pub fn boundary_f1(pred: &[Vec<EntityTriplet>], gold: &[Vec<EntityTriplet>]) -> Prf {
    score(pred, gold, EntityTriplet::span)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: usize, e: usize, ty: usize) -> EntityTriplet {
        EntityTriplet::new(s, e, ty)
    }

    #[test]
    fn perfect_and_empty() {
        let g = vec![vec![t(0, 2, 0), t(1, 1, 1)]];
        assert_eq!(
            span_f1(&g, &g),
            Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
        assert_eq!(span_f1(&[vec![]], &g), Prf::default());
    }

    #[test]
    fn half_right() {
        let p = vec![vec![t(0, 2, 0), t(1, 1, 0)]];
        let g = vec![vec![t(0, 2, 0), t(1, 1, 1)]];
        let s = span_f1(&p, &g);
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
        assert_eq!(boundary_f1(&p, &g).f1, 1.0);
    }

    #[test]
    fn duplicates_match_once() {
        let p = vec![vec![t(0, 0, 0), t(0, 0, 0)]];
        let g = vec![vec![t(0, 0, 0)]];
        let s = span_f1(&p, &g);
        assert_eq!((s.precision, s.recall), (0.5, 1.0));
    }

    fn sentences() -> impl Strategy<Value = Vec<Vec<EntityTriplet>>> {
        prop::collection::vec(
            prop::collection::vec((0usize..5, 0usize..3, 0usize..2), 0..5).prop_map(|v| {
                v.into_iter().map(|(s, l, ty)| t(s, s + l, ty)).collect()
            }),
            1..5,
        )
    }

    proptest! {
        #[test]
        fn precision_recall_swap(a in sentences(), b in sentences()) {
            let n = a.len().min(b.len());
            let (a, b) = (&a[..n], &b[..n]);
            prop_assert_eq!(span_f1(a, b).precision, span_f1(b, a).recall);
            prop_assert!(boundary_f1(a, b).f1 >= span_f1(a, b).f1);
        }

        #[test]
        fn self_match_is_perfect(a in sentences()) {
            prop_assume!(a.iter().any(|s| !s.is_empty()));
            let s = span_f1(&a, &a);
            prop_assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
    }
}
