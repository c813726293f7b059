//! Reward-weighted cross-entropy over a sampled episode.

use crate::etg::{step_losses, SlotGrammar};
use crate::gpa::GpaConfig;
use crate::nn::{Parameters, Tape, Var, Weights};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// `(1/T)·Σ ce_t·r_t`.
pub fn reward_weighted_mean(ce: &[f64], rewards: &[f64]) -> Result<f64> {
    check_lengths(ce.len(), rewards.len())?;
    Ok(ce.iter().zip(rewards).map(|(c, r)| c * r).sum::<f64>() / ce.len() as f64)
}

fn check_lengths(t: usize, r: usize) -> Result<()> {
    if t == 0 || t != r {
        return Err(Error::Validation(format!(
            "episode has {t} steps but {r} rewards"
        )));
    }
    Ok(())
}

/// Tape node for the episode loss. `scale` multiplies the whole loss, for
/// averaging over a batch. Sampling-time masks and priors are rebuilt from
/// `indices`, so the recorded distributions are reproduced exactly.
#[allow(clippy::too_many_arguments)]
pub fn rl_loss<T: Scalar>(
    tape: &mut Tape<T>,
    w: &Weights<Var>,
    params: &Parameters<T>,
    token_ids: &[usize],
    indices: &[usize],
    rewards: &[f64],
    grammar: SlotGrammar,
    gpa: &GpaConfig,
    scale: f64,
) -> Result<Var> {
    check_lengths(indices.len(), rewards.len())?;
    let ce = step_losses(tape, w, params, token_ids, indices, grammar, gpa)?;
    let inv = scale / indices.len() as f64;
    let terms: Vec<_> = ce.into_iter().zip(rewards).map(|(v, &r)| (v, T::of(r * inv))).collect();
    Ok(tape.weighted_sum(&terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::bind;
    use crate::nn::optim::collect_gradients;
    use crate::nn::ModelConfig;

    #[test]
    fn hand_example() {
        assert_eq!(reward_weighted_mean(&[0.7, 0.3], &[1.0, 0.5]).unwrap(), 0.425);
        assert!(reward_weighted_mean(&[0.7], &[1.0, 0.5]).is_err());
    }

    #[test]
    fn zero_rewards_give_zero_loss_and_gradient() {
        let p = Parameters::<f64>::init(ModelConfig::new(20, 2, 8, 6, 2)).unwrap();
        let mut tape = Tape::new();
        let w = bind(&mut tape, &p);
        let idx = [3, 4, 1, 0];
        let l = rl_loss(&mut tape, &w, &p, &[1, 2, 3], &idx, &[0.0; 4], SlotGrammar::Off, &GpaConfig::default(), 1.0).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
        let g = collect_gradients(&tape.backward(l), &w, &p.weights);
        assert_eq!(g.sq_norm(), 0.0);
    }
}
