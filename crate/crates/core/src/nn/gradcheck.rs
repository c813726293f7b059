//! Central-difference verification of the training gradient.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::bind;
use super::optim::collect_gradients;
use super::{Parameters, Tape};
use crate::etg::{step_losses, SlotGrammar};
use crate::gpa::GpaConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Weight names that contributed at least one sampled scalar.
    pub groups: Vec<String>,
    pub pass: bool,
}

/// Mean per-step cross-entropy of `targets` under teacher forcing.
pub fn sequence_loss(params: &Parameters<f64>, token_ids: &[usize], targets: &[usize], gpa: &GpaConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let w = bind(&mut tape, params);
    let ce = step_losses(&mut tape, &w, params, token_ids, targets, SlotGrammar::Off, gpa)?;
    let inv = 1.0 / ce.len() as f64;
    let terms: Vec<_> = ce.into_iter().map(|v| (v, inv)).collect();
    let loss = tape.weighted_sum(&terms);
    Ok(tape.value(loss).item())
}

/// Compares analytic and central-difference gradients of
/// [`sequence_loss`] on `per_leaf` random scalars of every weight tensor
/// (at least 50 overall). Relative error uses a denominator floor of 1e-6.
#[allow(clippy::too_many_arguments)]
pub fn finite_diff_check(
    params: &Parameters<f64>,
    token_ids: &[usize],
    targets: &[usize],
    gpa: &GpaConfig,
    epsilon: f64,
    tolerance: f64,
    per_leaf: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::Validation(format!("epsilon {epsilon} outside [1e-6, 1e-3]")));
    }
    let mut tape = Tape::new();
    let w = bind(&mut tape, params);
    let ce = step_losses(&mut tape, &w, params, token_ids, targets, SlotGrammar::Off, gpa)?;
    let inv = 1.0 / ce.len() as f64;
    let terms: Vec<_> = ce.into_iter().map(|v| (v, inv)).collect();
    let loss = tape.weighted_sum(&terms);
    let analytic = collect_gradients(&tape.backward(loss), &w, &params.weights);

    let names = params.weights.names();
    let sizes: Vec<usize> = params.weights.leaves().iter().map(|m| m.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = Vec::new();
    for (leaf, &size) in sizes.iter().enumerate() {
        let mut idx: Vec<usize> = (0..size).collect();
        idx.shuffle(&mut rng);
        picks.extend(idx.into_iter().take(per_leaf).map(|i| (leaf, i)));
    }
    if picks.len() < 50 {
        return Err(Error::Validation(format!("only {} scalars sampled, need 50", picks.len())));
    }

    let grads = analytic.leaves();
    let mut probe = params.clone();
    let mut max_rel: f64 = 0.0;
    let mut groups = Vec::new();
    for &(leaf, i) in &picks {
        let orig = params.weights.leaves()[leaf].as_slice()[i];
        probe.weights.leaves_mut()[leaf].as_mut_slice()[i] = orig + epsilon;
        let up = sequence_loss(&probe, token_ids, targets, gpa)?;
        probe.weights.leaves_mut()[leaf].as_mut_slice()[i] = orig - epsilon;
        let down = sequence_loss(&probe, token_ids, targets, gpa)?;
        probe.weights.leaves_mut()[leaf].as_mut_slice()[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = grads[leaf].as_slice()[i];
        if !a.is_finite() {
            max_rel = f64::INFINITY;
        } else {
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
        if groups.last() != Some(&names[leaf]) {
            groups.push(names[leaf].clone());
        }
    }
    Ok(GradCheckReport {
        max_relative_error: max_rel,
        checked: picks.len(),
        groups,
        pass: max_rel < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;

    #[test]
    fn small_model_passes() {
        let p = Parameters::<f64>::init(ModelConfig::new(20, 2, 8, 6, 11)).unwrap();
        // (0, 3, T0), (1, 2, T1) nests, EOS
        let targets = [3, 6, 1, 4, 5, 2, 0];
        let r = finite_diff_check(&p, &[4, 7, 1, 9, 2, 5], &targets, &GpaConfig { enabled: true, alpha: 0.7 }, 1e-4, 1e-3, 2, 0)
            .unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.checked >= 50);
        assert!(r.groups.iter().any(|g| g == "lambda_raw"));
    }

    #[test]
    fn epsilon_range_enforced() {
        let p = Parameters::<f64>::init(ModelConfig::new(20, 2, 8, 6, 11)).unwrap();
        assert!(finite_diff_check(&p, &[1], &[0], &GpaConfig::default(), 0.1, 1e-3, 2, 0).is_err());
    }
}
