//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! Operations are recorded on a [`Tape`] as they are evaluated. Calling
//! [`Tape::backward`] on a `1 × 1` node walks the tape in reverse and
//! returns the gradient of that node with respect to every recorded value.

use super::matrix::{self, Matrix};
use crate::scalar::Scalar;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Matrix<T>,
        inv_std: Vec<T>,
    },
    SoftmaxRows {
        x: Var,
    },
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    Row(Var, usize),
    Softplus(Var),
    GaussianPrior {
        coeff: Var,
        sq_dist: Vec<T>,
    },
    PriorMix {
        probs: Var,
        prior: Var,
        alpha: T,
        offset: usize,
    },
    NegLogPick {
        probs: Var,
        index: usize,
    },
    WeightedSum(Vec<(Var, T)>),
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
}

/// Recording of one forward evaluation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    /// Parameter or constant input.
    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matrix::matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = matrix::matmul_bt(self.value(a), self.value(b));
        self.push(v, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = matrix::add(self.value(a), self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Broadcast-add a `1 × cols` row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = matrix::add_row(self.value(a), self.value(row));
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = matrix::relu(self.value(a));
        self.push(v, Op::Relu(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Var {
        let (normed, inv_std) = matrix::normalize_rows(self.value(x), eps);
        let mut out = normed.clone();
        let g = self.value(gamma).as_slice();
        let b = self.value(beta).as_slice();
        for r in 0..out.rows() {
            for ((o, &gi), &bi) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gi + bi;
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            },
        )
    }

    /// Row-wise softmax. `mask`, when given, holds one flag per element;
    /// disallowed entries get probability zero. Every row must allow at
    /// least one entry.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Var {
        let mut v = self.value(x).clone();
        let cols = v.cols();
        for r in 0..v.rows() {
            let m = mask.map(|m| &m[r * cols..(r + 1) * cols]);
            let ok = matrix::softmax_in_place(v.row_mut(r), m);
            assert!(ok, "softmax row {r} fully masked");
        }
        self.push(v, Op::SoftmaxRows { x })
    }

    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let v = self.value(table).select_rows(idx);
        self.push(
            v,
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows column mismatch");
            rows += m.rows();
            data.extend_from_slice(m.as_slice());
        }
        let v = Matrix::from_vec(rows, cols, data).expect("consistent concat");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        let v = Matrix::row_vector(self.value(a).row(r).to_vec());
        self.push(v, Op::Row(a, r))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(matrix::softplus);
        self.push(v, Op::Softplus(a))
    }

    /// Normalised Gaussian bump over positions `0..n` centred at `center`,
    /// with the `1 × 1` node `coeff` as the precision-like coefficient.
    /// Positions outside `support` get zero mass.
    pub fn gaussian_prior(&mut self, coeff: Var, center: usize, n: usize, support: Option<&[bool]>) -> Var {
        let c = self.value(coeff).item();
        let sq_dist: Vec<T> = (0..n)
            .map(|m| {
                let d = T::of_usize(m) - T::of_usize(center);
                d * d
            })
            .collect();
        let v = Matrix::row_vector(restricted_gaussian(&sq_dist, c, support));
        self.push(v, Op::GaussianPrior { coeff, sq_dist })
    }

    /// Reshapes the block `probs[offset..]` of a `1 × m` distribution toward
    /// `prior` while preserving the block's mass.
    pub fn prior_mix(&mut self, probs: Var, prior: Var, alpha: T, offset: usize) -> Var {
        let mut v = self.value(probs).clone();
        mix_block(v.as_mut_slice(), offset, self.value(prior).as_slice(), alpha);
        self.push(
            v,
            Op::PriorMix {
                probs,
                prior,
                alpha,
                offset,
            },
        )
    }

    /// `-ln p[index]` for a `1 × m` distribution.
    pub fn neg_log_pick(&mut self, probs: Var, index: usize) -> Var {
        let p = self.value(probs).as_slice()[index].max(T::min_positive_value());
        self.push(Matrix::scalar(-p.ln()), Op::NegLogPick { probs, index })
    }

    /// `Σ wᵢ·xᵢ` over `1 × 1` nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let s = terms
            .iter()
            .fold(T::zero(), |acc, &(v, w)| acc + self.value(v).item() * w);
        self.push(Matrix::scalar(s), Op::WeightedSum(terms.to_vec()))
    }

    /// Gradients of the `1 × 1` node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).shape(), [1, 1], "loss must be 1x1");
        let mut grads: Vec<Option<Matrix<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Matrix::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = matrix::matmul_bt(&g, self.value(*b));
                    let gb = matrix::matmul_at(self.value(*a), &g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulBt(a, b) => {
                    let ga = matrix::matmul(&g, self.value(*b));
                    let gb = matrix::matmul_at(&g, self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &x) in gr.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *row, gr);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut grads, *a, g.map(|x| x * s));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut ga = g.clone();
                    for (o, &xi) in ga.as_mut_slice().iter_mut().zip(x.as_slice()) {
                        if xi <= T::zero() {
                            *o = T::zero();
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normed,
                    inv_std,
                } => {
                    let cols = g.cols();
                    let n = T::of_usize(cols);
                    let gam = self.value(*gamma).as_slice();
                    let mut gg = Matrix::zeros(1, cols);
                    let mut gb = Matrix::zeros(1, cols);
                    let mut gx = Matrix::zeros(g.rows(), cols);
                    let mut dxhat = vec![T::zero(); cols];
                    for r in 0..g.rows() {
                        let gr = g.row(r);
                        let xh = normed.row(r);
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for c in 0..cols {
                            gg.as_mut_slice()[c] += gr[c] * xh[c];
                            gb.as_mut_slice()[c] += gr[c];
                            dxhat[c] = gr[c] * gam[c];
                            sum_d += dxhat[c];
                            sum_dx += dxhat[c] * xh[c];
                        }
                        let k = inv_std[r] / n;
                        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o = k * (n * dxhat[c] - sum_d - xh[c] * sum_dx);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gamma, gg);
                    accumulate(&mut grads, *beta, gb);
                }
                Op::SoftmaxRows { x } => {
                    let p = &node.value;
                    let mut gx = Matrix::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let pr = p.row(r);
                        let gr = g.row(r);
                        let inner = matrix::dot(pr, gr);
                        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o = pr[c] * (gr[c] - inner);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::GatherRows { table, idx } => {
                    let t = self.value(*table);
                    let mut gt = Matrix::zeros(t.rows(), t.cols());
                    for (i, &r) in idx.iter().enumerate() {
                        for (o, &x) in gt.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let idx: Vec<usize> = (start..start + rows).collect();
                        accumulate(&mut grads, p, g.select_rows(&idx));
                        start += rows;
                    }
                }
                Op::Row(a, r) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    ga.row_mut(*r).copy_from_slice(g.as_slice());
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softplus(a) => {
                    let x = self.value(*a);
                    let mut ga = g.clone();
                    for (o, &xi) in ga.as_mut_slice().iter_mut().zip(x.as_slice()) {
                        *o *= matrix::sigmoid(xi);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::GaussianPrior { coeff, sq_dist } => {
                    // q = softmax(-c·d²): dq/dc = q ⊙ (E_q[d²] - d²)
                    let q = node.value.as_slice();
                    let mean_sq: T = q.iter().zip(sq_dist).map(|(&qi, &di)| qi * di).sum();
                    let gc: T = q
                        .iter()
                        .zip(sq_dist)
                        .zip(g.as_slice())
                        .map(|((&qi, &di), &gi)| gi * qi * (mean_sq - di))
                        .sum();
                    accumulate(&mut grads, *coeff, Matrix::scalar(gc));
                }
                Op::PriorMix {
                    probs,
                    prior,
                    alpha,
                    offset,
                } => {
                    let p = self.value(*probs).as_slice();
                    let q = self.value(*prior).as_slice();
                    let mass: T = p[*offset..].iter().copied().sum();
                    let gs = g.as_slice();
                    let mut gp = g.clone();
                    let mut gq = Matrix::zeros(1, q.len());
                    if mass > T::zero() {
                        let a = *alpha;
                        let one_m = T::one() - a;
                        let gq_dot: T = gs[*offset..]
                            .iter()
                            .zip(q)
                            .map(|(&gi, &qi)| gi * qi)
                            .sum();
                        for (j, o) in gp.as_mut_slice()[*offset..].iter_mut().enumerate() {
                            *o = a * gs[*offset + j] + one_m * gq_dot;
                        }
                        for (j, o) in gq.as_mut_slice().iter_mut().enumerate() {
                            *o = one_m * mass * gs[*offset + j];
                        }
                    }
                    accumulate(&mut grads, *probs, gp);
                    accumulate(&mut grads, *prior, gq);
                }
                Op::NegLogPick { probs, index } => {
                    let pv = self.value(*probs);
                    let p = pv.as_slice()[*index].max(T::min_positive_value());
                    let mut gp = Matrix::zeros(1, pv.cols());
                    gp.as_mut_slice()[*index] = -g.item() / p;
                    accumulate(&mut grads, *probs, gp);
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        accumulate(&mut grads, v, Matrix::scalar(g.item() * w));
                    }
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// `exp(-c·d²)` normalised; the largest term is `exp(0)` whenever the centre
/// lies inside the support, so no overflow is possible.
pub(crate) fn gaussian_from_sq_dist<T: Scalar>(sq_dist: &[T], c: T) -> Vec<T> {
    let min = sq_dist.iter().copied().fold(T::infinity(), T::min);
    let mut v: Vec<T> = sq_dist.iter().map(|&d| (-(c * (d - min))).exp()).collect();
    let z: T = v.iter().copied().sum();
    for x in &mut v {
        *x /= z;
    }
    v
}

/// [`gaussian_from_sq_dist`] limited to the positions flagged in `support`.
pub(crate) fn restricted_gaussian<T: Scalar>(sq_dist: &[T], coeff: T, support: Option<&[bool]>) -> Vec<T> {
    match support {
        None => gaussian_from_sq_dist(sq_dist, coeff),
        Some(mask) => {
            let idx: Vec<usize> = (0..sq_dist.len()).filter(|&i| mask[i]).collect();
            let sub: Vec<T> = idx.iter().map(|&i| sq_dist[i]).collect();
            let vals = gaussian_from_sq_dist(&sub, coeff);
            let mut out = vec![T::zero(); sq_dist.len()];
            for (&i, v) in idx.iter().zip(vals) {
                out[i] = v;
            }
            out
        }
    }
}

/// In-place block mixing: with `w = Σ block`, the block becomes
/// `α·block + (1-α)·w·prior`. Leaves everything untouched when `w = 0`.
pub(crate) fn mix_block<T: Scalar>(dist: &mut [T], offset: usize, prior: &[T], alpha: T) {
    let block = &mut dist[offset..];
    assert_eq!(block.len(), prior.len(), "prior length must match pointer block");
    let mass: T = block.iter().copied().sum();
    if mass <= T::zero() {
        return;
    }
    let one_m = T::one() - alpha;
    for (b, &q) in block.iter_mut().zip(prior) {
        *b = alpha * *b + one_m * mass * q;
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.grads[v.0].take()
    }
}
