//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::Weights;
use super::tape::{Gradients, Var};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Gradient of every bound weight, zero where none flowed.
pub fn collect_gradients<T: Scalar>(grads: &Gradients<T>, bound: &Weights<Var>, like: &Weights<Matrix<T>>) -> Weights<Matrix<T>> {
    let mut out = like.zeros_like();
    for (dst, v) in out.leaves_mut().into_iter().zip(bound.leaves()) {
        if let Some(g) = grads.get(*v) {
            dst.add_assign(g);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<T> {
    pub step: u64,
    pub m: Weights<Matrix<T>>,
    pub v: Weights<Matrix<T>>,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(like: &Weights<Matrix<T>>) -> Self {
        Self {
            step: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }
}

/// One update: `w ← w − lr·(m̂ / (√v̂ + eps) + weight_decay·w)`.
pub fn adamw_step<T: Scalar>(
    params: &mut Weights<Matrix<T>>,
    grads: &Weights<Matrix<T>>,
    state: &mut AdamWState<T>,
    lr: f64,
    weight_decay: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    let shapes_match = |a: &Weights<Matrix<T>>| {
        params
            .leaves()
            .iter()
            .zip(a.leaves())
            .all(|(p, q)| p.shape() == q.shape())
    };
    if !shapes_match(grads) || !shapes_match(&state.m) || !shapes_match(&state.v) {
        return Err(Error::Shape("gradient or optimizer state shape differs from parameters".into()));
    }
    state.step += 1;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let bc1 = T::one() - b1.powi(state.step as i32);
    let bc2 = T::one() - b2.powi(state.step as i32);
    let (lr, wd, eps) = (T::of(lr), T::of(weight_decay), T::of(cfg.eps));
    let leaves = params
        .leaves_mut()
        .into_iter()
        .zip(grads.leaves())
        .zip(state.m.leaves_mut())
        .zip(state.v.leaves_mut());
    for (((p, g), m), v) in leaves {
        let it = p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice());
        for (((w, &g), m), v) in it {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *w);
        }
    }
    Ok(())
}
