//! Boundary-distance statistics over nested entity pairs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Dataset, EntityTriplet, Sentence};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NestedPair {
    pub outer: EntityTriplet,
    pub inner: EntityTriplet,
    pub head_distance: usize,
    pub tail_distance: usize,
}

/// Every ordered `(outer, inner)` pair where `outer` contains `inner` and
/// the spans differ on at least one side.
pub fn nested_pairs(sentence: &Sentence) -> Vec<NestedPair> {
    let mut pairs = Vec::new();
    for outer in &sentence.entities {
        for inner in &sentence.entities {
            if outer.strictly_contains(inner) {
                pairs.push(NestedPair {
                    outer: *outer,
                    inner: *inner,
                    head_distance: inner.start - outer.start,
                    tail_distance: outer.end - inner.end,
                });
            }
        }
    }
    pairs
}

/// Frequencies of head and tail distances, keyed by distance.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BoundaryHistogram {
    pub head: BTreeMap<usize, usize>,
    pub tail: BTreeMap<usize, usize>,
}

impl BoundaryHistogram {
    pub fn is_empty(&self) -> bool {
        self.head.is_empty() && self.tail.is_empty()
    }

    pub fn pair_count(&self) -> usize {
        self.head.values().sum()
    }

    /// Head and tail counts added together.
    pub fn pooled(&self) -> BTreeMap<usize, usize> {
        let mut out = self.head.clone();
        for (&d, &c) in &self.tail {
            *out.entry(d).or_default() += c;
        }
        out
    }

    /// `distance,head_count,tail_count`, ascending by distance.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("distance,head_count,tail_count\n");
        let mut keys: Vec<usize> = self.head.keys().chain(self.tail.keys()).copied().collect();
        keys.sort_unstable();
        keys.dedup();
        for d in keys {
            let h = self.head.get(&d).copied().unwrap_or(0);
            let t = self.tail.get(&d).copied().unwrap_or(0);
            let _ = writeln!(out, "{d},{h},{t}");
        }
        out
    }
}

pub fn boundary_histogram(dataset: &Dataset) -> BoundaryHistogram {
    let mut hist = BoundaryHistogram::default();
    for s in &dataset.sentences {
        for p in nested_pairs(s) {
            *hist.head.entry(p.head_distance).or_default() += 1;
            *hist.tail.entry(p.tail_distance).or_default() += 1;
        }
    }
    hist
}

/// Moment fit of a distance histogram.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub count: usize,
    pub mean: f64,
    /// Sample variance (divisor `N - 1`).
    pub variance: f64,
    /// Mean squared distance: the variance of a zero-centred Gaussian over
    /// signed offsets whose absolute values produced this histogram.
    pub centered_variance: f64,
    /// `1 / (2 · centered_variance)`, the matching coefficient in
    /// `exp(-c · d²)`.
    pub coefficient: f64,
}

pub fn fit_gaussian(histogram: &BTreeMap<usize, usize>) -> Result<GaussianFit> {
    let count: usize = histogram.values().sum();
    if count < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 observations, have {count}"
        )));
    }
    let n = count as f64;
    let mean = histogram
        .iter()
        .map(|(&d, &c)| d as f64 * c as f64)
        .sum::<f64>()
        / n;
    let ss = histogram
        .iter()
        .map(|(&d, &c)| (d as f64 - mean).powi(2) * c as f64)
        .sum::<f64>();
    let centered_variance = histogram
        .iter()
        .map(|(&d, &c)| (d as f64).powi(2) * c as f64)
        .sum::<f64>()
        / n;
    Ok(GaussianFit {
        count,
        mean,
        variance: ss / (n - 1.0),
        centered_variance,
        coefficient: if centered_variance > 0.0 {
            1.0 / (2.0 * centered_variance)
        } else {
            f64::INFINITY
        },
    })
}
