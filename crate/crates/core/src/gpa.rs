//! Gaussian boundary prior for nested entities.
//!
//! When a boundary slot is decoded and an earlier entity of the same
//! episode qualifies as its nesting reference, the pointer block of the
//! output distribution is blended with a Gaussian bump centred on the
//! reference's matching boundary:
//!
//! `block ← α·block + (1-α)·mass(block)·prior`
//!
//! where the prior is `exp(-c·(m - center)²)` normalised over positions,
//! with `c = λ` for start slots and `c = μ` for end slots.

use serde::{Deserialize, Serialize};

use crate::corpus::EntityTriplet;
use crate::etg::{OutputDistribution, Slot};
use crate::nn::tape::{mix_block, restricted_gaussian};
use crate::scalar::Scalar;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpaConfig {
    pub enabled: bool,
    /// Weight of the model's own pointer distribution.
    pub alpha: f64,
}

impl Default for GpaConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            alpha: 0.8,
        }
    }
}

impl GpaConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Validation(format!(
                "gpa.alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Normalised prior over token positions `0..n`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorVector<T> {
    pub probs: Vec<T>,
}

/// `exp(-coeff·(m - center)²)` over `m ∈ 0..n`, normalised. When `support`
/// is given, positions outside it get zero and the rest are renormalised.
pub fn gaussian_prior<T: Scalar>(center: usize, n: usize, coeff: T, support: Option<&[bool]>) -> PriorVector<T> {
    assert!(center < n, "prior centre {center} outside 0..{n}");
    let sq: Vec<T> = (0..n)
        .map(|m| {
            let d = T::of_usize(m) - T::of_usize(center);
            d * d
        })
        .collect();
    PriorVector {
        probs: restricted_gaussian(&sq, coeff, support),
    }
}

/// Span of the earlier entity that conditions the prior, if any.
///
/// Start slots use the most recently generated entity. End slots use the
/// most recent entity that could nest with a span starting at
/// `sampled_start`: either the new span starts inside it, or starts at or
/// before its start.
pub fn select_reference(
    generated: &[EntityTriplet],
    slot: Slot,
    sampled_start: Option<usize>,
) -> Result<Option<(usize, usize)>> {
    match slot {
        Slot::Start => Ok(generated.last().map(EntityTriplet::span)),
        Slot::End => {
            let s = sampled_start.ok_or_else(|| {
                Error::Validation("end-slot reference needs the sampled start".into())
            })?;
            Ok(generated
                .iter()
                .rev()
                .find(|e| (e.start <= s && s <= e.end) || s <= e.start)
                .map(EntityTriplet::span))
        }
        Slot::Type => Ok(None),
    }
}

/// Blends `prior` into the pointer block of `dist`, keeping the block's
/// total mass. EOS and type entries are untouched. Returns `dist`
/// unchanged when the prior is disabled or the block has no mass.
pub fn mix_prior<T: Scalar>(
    dist: &OutputDistribution<T>,
    prior: &PriorVector<T>,
    config: &GpaConfig,
    pointer_offset: usize,
) -> OutputDistribution<T> {
    let mut out = dist.clone();
    if config.enabled {
        mix_block(&mut out.probs, pointer_offset, &prior.probs, T::of(config.alpha));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_position_is_certain() {
        assert_eq!(gaussian_prior(0, 1, 2.0f64, None).probs, vec![1.0]);
    }

    #[test]
    fn symmetric_about_centre() {
        for c in [0.1, 1.0, std::f64::consts::PI] {
            let p = gaussian_prior(2, 5, c, None).probs;
            assert_eq!(p[1], p[3]);
            assert_eq!(p[0], p[4]);
        }
    }

    #[test]
    fn sharp_prior_is_nearly_one_hot() {
        let p = gaussian_prior(9, 20, 50.0f64, None).probs;
        assert!(p[9] > 0.999);
    }

    #[test]
    fn support_restriction_renormalises() {
        let mask = [false, false, true, true, true];
        let p = gaussian_prior(1, 5, 1.0f64, Some(&mask)).probs;
        assert_eq!(&p[..2], &[0.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[2] > p[3] && p[3] > p[4]);
    }

    #[test]
    fn reference_selection() {
        let t = |s, e| EntityTriplet::new(s, e, 0);
        assert_eq!(select_reference(&[], Slot::Start, None).unwrap(), None);
        assert_eq!(select_reference(&[], Slot::End, Some(3)).unwrap(), None);
        let gen = [t(1, 1), t(10, 14)];
        assert_eq!(select_reference(&gen, Slot::Start, None).unwrap(), Some((10, 14)));
        assert_eq!(select_reference(&gen, Slot::End, Some(10)).unwrap(), Some((10, 14)));
        assert_eq!(select_reference(&gen, Slot::End, Some(1)).unwrap(), Some((10, 14)));
        assert_eq!(select_reference(&[t(5, 6)], Slot::End, Some(9)).unwrap(), None);
        assert_eq!(select_reference(&[t(5, 6), t(9, 9)], Slot::End, Some(6)).unwrap(), Some((9, 9)));
        assert!(select_reference(&gen, Slot::End, None).is_err());
    }

    fn dist(probs: Vec<f64>) -> OutputDistribution<f64> {
        OutputDistribution {
            logits: vec![0.0; probs.len()],
            probs,
        }
    }

    #[test]
    fn mixing_examples() {
        let cfg = GpaConfig { enabled: true, alpha: 0.7 };
        // EOS 0.1, one type 0.1, four pointers at 0.2 each (w = 0.8)
        let d = dist(vec![0.1, 0.1, 0.2, 0.2, 0.2, 0.2]);
        let prior = PriorVector { probs: vec![0.0, 1.0, 0.0, 0.0] };
        let out = mix_prior(&d, &prior, &cfg, 2);
        let expected = [0.1, 0.1, 0.14, 0.38, 0.14, 0.14];
        for (a, b) in out.probs.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }

        let one = GpaConfig { enabled: true, alpha: 1.0 };
        assert_eq!(mix_prior(&d, &prior, &one, 2), d);
        assert_eq!(mix_prior(&d, &prior, &GpaConfig::disabled(), 2), d);

        let full = dist(vec![0.0, 0.25, 0.25, 0.25, 0.25]);
        let prior = gaussian_prior(1, 4, 1.0, None);
        let zero = GpaConfig { enabled: true, alpha: 0.0 };
        let out = mix_prior(&full, &prior, &zero, 1);
        for (a, b) in out.probs[1..].iter().zip(&prior.probs) {
            assert!((a - b).abs() < 1e-15);
        }

        let no_mass = dist(vec![0.5, 0.5, 0.0, 0.0]);
        let prior = PriorVector { probs: vec![0.5, 0.5] };
        assert_eq!(mix_prior(&no_mass, &prior, &cfg, 2), no_mass);
    }

    proptest! {
        #[test]
        fn prior_is_normalised_and_decays(center in 0usize..12, extra in 0usize..12, coeff in 0.01f64..20.0) {
            let n = center + 1 + extra;
            let p = gaussian_prior(center, n, coeff, None).probs;
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            for m in 0..n {
                let dm = m.abs_diff(center);
                for k in 0..n {
                    if k.abs_diff(center) > dm && p[m] > 0.0 {
                        prop_assert!(p[k] < p[m] || p[k] == 0.0);
                    }
                }
            }
        }

        #[test]
        fn mixing_preserves_mass_and_other_entries(
            raw in prop::collection::vec(0.01f64..1.0, 6),
            center in 0usize..4,
            alpha in 0.0f64..=1.0,
        ) {
            let z: f64 = raw.iter().sum();
            let d = dist(raw.iter().map(|x| x / z).collect());
            let prior = gaussian_prior(center, 4, 0.7, None);
            let out = mix_prior(&d, &prior, &GpaConfig { enabled: true, alpha }, 2);
            prop_assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert_eq!(&out.probs[..2], &d.probs[..2]);
        }
    }
}
