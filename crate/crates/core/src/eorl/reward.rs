//! Window-level rewards for sampled triplet sequences.

use std::collections::HashSet;

use crate::corpus::{EntityTriplet, IndexKind, OutputLayout};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowClass {
    Correct,
    Empty,
    Other,
}

impl WindowClass {
    pub fn reward(self) -> f64 {
        match self {
            WindowClass::Correct => 1.0,
            WindowClass::Empty => 0.5,
            WindowClass::Other => 0.0,
        }
    }
}

/// Per-step rewards of one episode; every step of a window shares a value.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardTrace {
    pub rewards: Vec<f64>,
}

impl RewardTrace {
    pub fn mean(&self) -> f64 {
        if self.rewards.is_empty() {
            0.0
        } else {
            self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
        }
    }
}

/// Classifies one window against the gold set and the triplets already
/// generated in this episode. Cases are tried in order: a new gold triplet
/// is correct; a window holding EOS, or whose two boundary slots point at
/// a gold span, is empty; anything else is other. A repeated gold triplet
/// is empty by default and other with `dup_override`.
pub fn classify_triplet(
    window: &[usize],
    gold: &[EntityTriplet],
    seen: &HashSet<EntityTriplet>,
    layout: OutputLayout,
    dup_override: bool,
) -> WindowClass {
    let parsed = layout.parse_window(window);
    if let Some(t) = parsed {
        if gold.contains(&t) {
            if !seen.contains(&t) {
                return WindowClass::Correct;
            }
            if dup_override {
                return WindowClass::Other;
            }
        }
    }
    if window.contains(&OutputLayout::EOS) {
        return WindowClass::Empty;
    }
    let pointer = |i: usize| match window.get(i).map(|&x| layout.kind(x)) {
        Some(Ok(IndexKind::Pointer(p))) => Some(p),
        _ => None,
    };
    if let (Some(s), Some(e)) = (pointer(0), pointer(1)) {
        if gold.iter().any(|g| g.span() == (s, e)) {
            return WindowClass::Empty;
        }
    }
    WindowClass::Other
}

/// Rewards for `indices`, window by window. The generated set grows by
/// each window's parsed triplet after it is scored.
pub fn assign_rewards(indices: &[usize], gold: &[EntityTriplet], layout: OutputLayout, dup_override: bool) -> RewardTrace {
    let mut seen = HashSet::new();
    let mut rewards = Vec::with_capacity(indices.len());
    for window in indices.chunks(3) {
        let r = classify_triplet(window, gold, &seen, layout, dup_override).reward();
        rewards.extend(std::iter::repeat(r).take(window.len()));
        if let Some(t) = layout.parse_window(window) {
            seen.insert(t);
        }
    }
    RewardTrace { rewards }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const L: OutputLayout = OutputLayout { num_types: 2, len: 4 };

    fn gold() -> Vec<EntityTriplet> {
        vec![EntityTriplet::new(0, 2, 0), EntityTriplet::new(1, 1, 1)]
    }

    #[test]
    fn examples() {
        let none = HashSet::new();
        // (0, 2, T0) is gold
        assert_eq!(classify_triplet(&[3, 5, 1], &gold(), &none, L, false), WindowClass::Correct);
        assert_eq!(classify_triplet(&[0, 4, 6], &gold(), &none, L, false), WindowClass::Empty);
        // right span, wrong type
        assert_eq!(classify_triplet(&[3, 5, 2], &gold(), &none, L, false), WindowClass::Empty);
        assert_eq!(classify_triplet(&[6, 6, 1], &gold(), &none, L, false), WindowClass::Other);
    }

    #[test]
    fn distinct_correct_windows_all_score_one() {
        let r = assign_rewards(&[3, 5, 1, 4, 4, 2, 0], &gold(), L, false);
        assert_eq!(r.rewards, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.5]);
    }

    #[test]
    fn duplicates() {
        let seq = [3, 5, 1, 3, 5, 1];
        assert_eq!(assign_rewards(&seq, &gold(), L, false).rewards, vec![1.0, 1.0, 1.0, 0.5, 0.5, 0.5]);
        assert_eq!(assign_rewards(&seq, &gold(), L, true).rewards, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn rewards_are_windowed(seq in prop::collection::vec(0usize..7, 0..13), dup in prop::bool::ANY) {
            let r = assign_rewards(&seq, &gold(), L, dup);
            prop_assert_eq!(r.rewards.len(), seq.len());
            for w in r.rewards.chunks(3) {
                prop_assert!([0.0, 0.5, 1.0].contains(&w[0]));
                prop_assert!(w.iter().all(|&x| x == w[0]));
            }
        }
    }
}
