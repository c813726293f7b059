//! Pointer-based triplet generation: per-step output distributions, the
//! optional slot grammar, and greedy / sampled decoding.
//!
//! Step `t` of a sequence fills slot `t mod 3` of a start/end/type window.
//! The same [`plan_step`] drives decoding and the teacher-forced loss, so
//! masks and boundary priors are applied identically in both.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{IndexKind, OutputLayout};
use crate::gpa::{self, GpaConfig};
use crate::nn::model::{encode, pointer_scores, IncrementalDecoder};
use crate::nn::{matrix, Parameters, Tape, Var, Weights};
use crate::scalar::Scalar;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Slot {
    Start,
    End,
    Type,
}

impl Slot {
    /// Slot filled by the `step`-th generated index (0-based).
    pub fn at(step: usize) -> Self {
        match step % 3 {
            0 => Slot::Start,
            1 => Slot::End,
            _ => Slot::Type,
        }
    }
}

/// Whether decoding masks indices that cannot fill the current slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotGrammar {
    #[default]
    Off,
    Grammar,
}

/// Probabilities over `{EOS} ∪ types ∪ pointers` for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputDistribution<T> {
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

impl<T: Scalar> OutputDistribution<T> {
    /// Lowest index among the most probable entries.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Allowed-index mask for a slot, or `None` when every index is allowed.
pub fn slot_mask(
    layout: OutputLayout,
    grammar: SlotGrammar,
    slot: Slot,
    current_start: Option<usize>,
) -> Option<Vec<bool>> {
    if grammar == SlotGrammar::Off {
        return None;
    }
    let mask = (0..layout.size())
        .map(|i| match (slot, layout.kind(i).expect("in range")) {
            (Slot::Start, IndexKind::Eos | IndexKind::Pointer(_)) => true,
            (Slot::End, IndexKind::Pointer(p)) => current_start.map_or(true, |s| p >= s),
            (Slot::Type, IndexKind::Type(_)) => true,
            _ => false,
        })
        .collect();
    Some(mask)
}

/// Softmax of `logits`, with disallowed indices forced to zero in grammar
/// mode.
pub fn output_distribution<T: Scalar>(
    logits: &[T],
    layout: OutputLayout,
    grammar: SlotGrammar,
    slot: Slot,
    current_start: Option<usize>,
) -> Result<OutputDistribution<T>> {
    let mask = slot_mask(layout, grammar, slot, current_start);
    distribution_with_mask(logits, mask.as_deref())
}

fn distribution_with_mask<T: Scalar>(logits: &[T], mask: Option<&[bool]>) -> Result<OutputDistribution<T>> {
    let mut probs = logits.to_vec();
    if !matrix::softmax_in_place(&mut probs, mask) {
        return Err(Error::DegenerateMask);
    }
    Ok(OutputDistribution {
        logits: logits.to_vec(),
        probs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Start slot, coefficient λ.
    Head,
    /// End slot, coefficient μ.
    Tail,
}

/// Where and how to apply the boundary prior at one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PriorPlan {
    pub center: usize,
    pub boundary: Boundary,
    /// Pointer positions the prior may cover (grammar mode only).
    pub support: Option<Vec<bool>>,
}

/// Everything that conditions step `t` besides the network itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepPlan {
    pub slot: Slot,
    pub current_start: Option<usize>,
    pub mask: Option<Vec<bool>>,
    pub prior: Option<PriorPlan>,
}

/// Derives slot, mask and prior for the step following `prefix`.
pub fn plan_step(prefix: &[usize], layout: OutputLayout, grammar: SlotGrammar, gpa: &GpaConfig) -> StepPlan {
    let t = prefix.len();
    let slot = Slot::at(t);
    let window_start = t - t % 3;
    let current_start = match slot {
        Slot::Start => None,
        _ => match layout.kind(prefix[window_start]) {
            Ok(IndexKind::Pointer(p)) => Some(p),
            _ => None,
        },
    };
    let mask = slot_mask(layout, grammar, slot, current_start);

    let prior = if gpa.enabled && slot != Slot::Type {
        let generated: Vec<_> = prefix[..window_start]
            .chunks(3)
            .filter_map(|w| layout.parse_window(w))
            .collect();
        let reference = match slot {
            Slot::Start => gpa::select_reference(&generated, slot, None).ok().flatten(),
            _ => current_start.and_then(|s| gpa::select_reference(&generated, slot, Some(s)).ok().flatten()),
        };
        reference.map(|(s, e)| {
            let (center, boundary) = match slot {
                Slot::Start => (s, Boundary::Head),
                _ => (e, Boundary::Tail),
            };
            let support = mask
                .as_ref()
                .map(|m| m[layout.pointer_offset()..].to_vec());
            PriorPlan {
                center,
                boundary,
                support,
            }
        })
    } else {
        None
    };
    StepPlan {
        slot,
        current_start,
        mask,
        prior,
    }
}

/// Applies a step plan to raw logits: masked softmax, then the boundary
/// prior if one is planned.
pub fn step_distribution<T: Scalar>(
    params: &Parameters<T>,
    logits: &[T],
    plan: &StepPlan,
    layout: OutputLayout,
    gpa: &GpaConfig,
) -> Result<OutputDistribution<T>> {
    let dist = distribution_with_mask(logits, plan.mask.as_deref())?;
    match &plan.prior {
        Some(p) if gpa.enabled => {
            let coeff = match p.boundary {
                Boundary::Head => params.lambda(),
                Boundary::Tail => params.mu(),
            };
            let prior = gpa::gaussian_prior(p.center, layout.len, coeff, p.support.as_deref());
            Ok(gpa::mix_prior(&dist, &prior, gpa, layout.pointer_offset()))
        }
        _ => Ok(dist),
    }
}

/// Distribution for the step that follows `prefix`.
pub fn next_distribution<T: Scalar>(
    params: &Parameters<T>,
    token_ids: &[usize],
    prefix: &[usize],
    grammar: SlotGrammar,
    gpa: &GpaConfig,
) -> Result<OutputDistribution<T>> {
    let enc = encode(params, token_ids)?;
    let layout = OutputLayout::new(params.config.num_types, token_ids.len());
    let mut dec = IncrementalDecoder::new(params, &enc);
    let mut state = dec.push(None)?;
    for &idx in prefix {
        state = dec.push(Some(idx))?;
    }
    let plan = plan_step(prefix, layout, grammar, gpa);
    step_distribution(params, &pointer_scores(&enc, &state), &plan, layout, gpa)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeOptions {
    pub grammar: SlotGrammar,
    pub gpa: GpaConfig,
    pub max_triplets: usize,
}

/// One decoded sequence with the distribution each index was chosen from.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub indices: Vec<usize>,
    pub steps: Vec<(OutputDistribution<T>, usize)>,
}

fn run_decode<T: Scalar>(
    params: &Parameters<T>,
    token_ids: &[usize],
    opts: &DecodeOptions,
    mut choose: impl FnMut(&OutputDistribution<T>) -> usize,
) -> Result<Trajectory<T>> {
    if opts.max_triplets == 0 {
        return Err(Error::Validation("max_triplets must be at least 1".into()));
    }
    let cap = params.config.max_decodable_triplets();
    if opts.max_triplets > cap {
        return Err(Error::Validation(format!(
            "max_triplets {} exceeds the decoder limit of {cap}",
            opts.max_triplets
        )));
    }
    let enc = encode(params, token_ids)?;
    let layout = OutputLayout::new(params.config.num_types, token_ids.len());
    let mut dec = IncrementalDecoder::new(params, &enc);
    let mut state = dec.push(None)?;
    let mut traj = Trajectory {
        indices: Vec::new(),
        steps: Vec::new(),
    };
    while traj.indices.len() < 3 * opts.max_triplets {
        let plan = plan_step(&traj.indices, layout, opts.grammar, &opts.gpa);
        let logits = pointer_scores(&enc, &state);
        let dist = step_distribution(params, &logits, &plan, layout, &opts.gpa)?;
        let idx = choose(&dist);
        traj.indices.push(idx);
        traj.steps.push((dist, idx));
        if plan.slot == Slot::Start && idx == OutputLayout::EOS {
            break;
        }
        if traj.indices.len() < 3 * opts.max_triplets {
            state = dec.push(Some(idx))?;
        }
    }
    Ok(traj)
}

/// Argmax decoding; ties go to the lowest index.
pub fn greedy_decode<T: Scalar>(params: &Parameters<T>, token_ids: &[usize], opts: &DecodeOptions) -> Result<Vec<usize>> {
    Ok(run_decode(params, token_ids, opts, |d| d.argmax())?.indices)
}

/// Categorical sampling from every step's adjusted distribution.
pub fn sample_decode<T: Scalar, R: Rng>(
    params: &Parameters<T>,
    token_ids: &[usize],
    opts: &DecodeOptions,
    rng: &mut R,
) -> Result<Trajectory<T>> {
    run_decode(params, token_ids, opts, |d| sample_index(&d.probs, rng))
}

/// Inverse-CDF draw. Zero-probability entries are never returned.
pub fn sample_index<T: Scalar, R: Rng>(probs: &[T], rng: &mut R) -> usize {
    let total: f64 = probs.iter().map(|p| p.as_f64()).sum();
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        let p = p.as_f64();
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Teacher-forced per-step cross-entropy nodes for `indices`, using the
/// same plans as decoding. Entry `t` is `-ln P_t(indices[t])`.
pub fn step_losses<T: Scalar>(
    tape: &mut Tape<T>,
    w: &Weights<Var>,
    params: &Parameters<T>,
    token_ids: &[usize],
    indices: &[usize],
    grammar: SlotGrammar,
    gpa: &GpaConfig,
) -> Result<Vec<Var>> {
    let fwd = crate::nn::model::forward_tape(tape, w, &params.config, token_ids, indices)?;
    let layout = OutputLayout::new(params.config.num_types, token_ids.len());
    let plans: Vec<StepPlan> = (0..indices.len())
        .map(|t| plan_step(&indices[..t], layout, grammar, gpa))
        .collect();
    let mask = if plans.iter().any(|p| p.mask.is_some()) {
        let mut m = Vec::with_capacity(plans.len() * layout.size());
        for p in &plans {
            match &p.mask {
                Some(pm) => m.extend_from_slice(pm),
                None => m.extend(std::iter::repeat(true).take(layout.size())),
            }
        }
        Some(m)
    } else {
        None
    };
    for (t, p) in plans.iter().enumerate() {
        if let Some(m) = &p.mask {
            if !m[indices[t]] {
                return Err(Error::Validation(format!(
                    "index {} at step {t} is masked by the slot grammar",
                    indices[t]
                )));
            }
        }
    }
    let probs = tape.softmax_rows(fwd.logits, mask.as_deref());
    let alpha = T::of(gpa.alpha);
    let mut lambda = None;
    let mut mu = None;
    let mut out = Vec::with_capacity(indices.len());
    for (t, plan) in plans.iter().enumerate() {
        let mut row = tape.row(probs, t);
        if let (true, Some(p)) = (gpa.enabled, &plan.prior) {
            let coeff = match p.boundary {
                Boundary::Head => *lambda.get_or_insert_with(|| tape.softplus(w.lambda_raw)),
                Boundary::Tail => *mu.get_or_insert_with(|| tape.softplus(w.mu_raw)),
            };
            let prior = tape.gaussian_prior(coeff, p.center, layout.len, p.support.as_deref());
            row = tape.prior_mix(row, prior, alpha, layout.pointer_offset());
        }
        out.push(tape.neg_log_pick(row, indices[t]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{decode_output, TypeVocabulary};
    use crate::nn::model::bind;
    use crate::nn::ModelConfig;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(seed: u64) -> Parameters<f64> {
        Parameters::init(ModelConfig::new(24, 2, 8, 10, seed)).unwrap()
    }

    fn opts(grammar: SlotGrammar, gpa: GpaConfig) -> DecodeOptions {
        DecodeOptions {
            grammar,
            gpa,
            max_triplets: 4,
        }
    }

    #[test]
    fn uniform_logits_give_uniform_probs() {
        let layout = OutputLayout::new(2, 3);
        let d = output_distribution(&[0.5f64; 6], layout, SlotGrammar::Off, Slot::Start, None).unwrap();
        assert!(d.probs.iter().all(|&p| (p - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn type_slot_mask() {
        let layout = OutputLayout::new(2, 3);
        let d = output_distribution(&[1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0], layout, SlotGrammar::Grammar, Slot::Type, None)
            .unwrap();
        assert_eq!(d.probs[0], 0.0);
        assert!(d.probs[3..].iter().all(|&p| p == 0.0));
        assert!((d.probs[1] + d.probs[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn end_slot_mask_respects_start() {
        let layout = OutputLayout::new(2, 4);
        let m = slot_mask(layout, SlotGrammar::Grammar, Slot::End, Some(2)).unwrap();
        assert_eq!(m, vec![false, false, false, false, false, true, true]);
    }

    #[test]
    fn fully_masked_is_an_error() {
        assert!(matches!(
            distribution_with_mask(&[1.0f64, 2.0], Some(&[false, false])),
            Err(Error::DegenerateMask)
        ));
    }

    #[test]
    fn argmax_ties_go_low() {
        let d = OutputDistribution {
            logits: vec![],
            probs: vec![0.2, 0.4, 0.4],
        };
        assert_eq!(d.argmax(), 1);
    }

    #[test]
    fn plan_references() {
        let layout = OutputLayout::new(2, 10);
        let gpa = GpaConfig::default();
        // first start slot: no reference
        assert_eq!(plan_step(&[], layout, SlotGrammar::Off, &gpa).prior, None);
        // after (2, 6, T0), the next start is centred on 2
        let prefix = [5, 9, 1];
        let p = plan_step(&prefix, layout, SlotGrammar::Off, &gpa).prior.unwrap();
        assert_eq!((p.center, p.boundary), (2, Boundary::Head));
        // end slot with start 3 nests inside (2, 6): centred on 6
        let p = plan_step(&[5, 9, 1, 6], layout, SlotGrammar::Off, &gpa).prior.unwrap();
        assert_eq!((p.center, p.boundary), (6, Boundary::Tail));
        // start 8 after (2, 6) has no nesting reference
        assert_eq!(plan_step(&[5, 9, 1, 11], layout, SlotGrammar::Off, &gpa).prior, None);
        // type slots never get a prior; disabled config never does
        assert_eq!(plan_step(&[5, 9, 1, 6, 7], layout, SlotGrammar::Off, &gpa).prior, None);
        assert_eq!(plan_step(&prefix, layout, SlotGrammar::Off, &GpaConfig::disabled()).prior, None);
    }

    #[test]
    fn untrained_grammar_decode_is_well_formed() {
        let v = TypeVocabulary::numbered(2).unwrap();
        for seed in 0..5 {
            let p = params(seed);
            let ids = [1, 5, 2, 8, 3, 9];
            let out = greedy_decode(&p, &ids, &opts(SlotGrammar::Grammar, GpaConfig::default())).unwrap();
            assert_eq!(decode_output(&out, &v, ids.len()).unwrap().malformed, 0);
            assert!(out.len() <= 12);
        }
    }

    #[test]
    fn zero_max_triplets_rejected() {
        let mut o = opts(SlotGrammar::Off, GpaConfig::default());
        o.max_triplets = 0;
        assert!(greedy_decode(&params(0), &[1, 2], &o).is_err());
    }

    #[test]
    fn alpha_one_matches_disabled_prior() {
        for seed in 0..5 {
            let p = params(seed);
            let ids = [3, 1, 4, 1, 5];
            for g in [SlotGrammar::Off, SlotGrammar::Grammar] {
                let mut rng_a = ChaCha8Rng::seed_from_u64(seed);
                let mut rng_b = ChaCha8Rng::seed_from_u64(seed);
                let a = sample_decode(&p, &ids, &opts(g, GpaConfig { enabled: true, alpha: 1.0 }), &mut rng_a).unwrap();
                let b = sample_decode(&p, &ids, &opts(g, GpaConfig::disabled()), &mut rng_b).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let p = params(1);
        let o = opts(SlotGrammar::Off, GpaConfig::default());
        let a = sample_decode(&p, &[1, 2, 3], &o, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_decode(&p, &[1, 2, 3], &o, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_frequencies_match_probabilities() {
        let probs = [0.1f64, 0.0, 0.25, 0.6, 0.05];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 10_000;
        let mut counts = [0usize; 5];
        for _ in 0..draws {
            counts[sample_index(&probs, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(probs) {
            let sd = (draws as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - draws as f64 * p).abs() <= 3.0 * sd + 1e-9, "{counts:?}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!((0..100).all(|_| sample_index(&[0.0f64, 1.0, 0.0], &mut rng) == 1));
    }

    #[test]
    fn step_losses_match_recorded_distributions() {
        for (seed, grammar) in [(2, SlotGrammar::Off), (3, SlotGrammar::Grammar), (4, SlotGrammar::Off)] {
            let p = params(seed);
            let ids = [3, 1, 4, 1, 5, 9, 2];
            let o = opts(grammar, GpaConfig { enabled: true, alpha: 0.6 });
            let traj = sample_decode(&p, &ids, &o, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let mut tape = Tape::new();
            let w = bind(&mut tape, &p);
            let ce = step_losses(&mut tape, &w, &p, &ids, &traj.indices, grammar, &o.gpa).unwrap();
            for (v, (dist, idx)) in ce.iter().zip(&traj.steps) {
                assert_eq!(tape.value(*v).item(), -dist.probs[*idx].ln());
            }
        }
    }

    proptest! {
        #[test]
        fn distributions_are_normalised(
            logits in prop::collection::vec(-30.0f64..30.0, 7),
            shift in -100.0f64..100.0,
            slot in 0usize..3,
            start in 0usize..4,
            grammar in prop::bool::ANY,
        ) {
            let layout = OutputLayout::new(2, 4);
            let g = if grammar { SlotGrammar::Grammar } else { SlotGrammar::Off };
            let slot = Slot::at(slot);
            let d = output_distribution(&logits, layout, g, slot, Some(start)).unwrap();
            prop_assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(d.probs.iter().all(|&p| p >= 0.0));
            let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
            let d2 = output_distribution(&shifted, layout, g, slot, Some(start)).unwrap();
            prop_assert_eq!(d.argmax(), d2.argmax());
            for (a, b) in d.probs.iter().zip(&d2.probs) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
