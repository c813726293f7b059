//! Encoder/decoder forward passes.
//!
//! The tape path runs a whole teacher-forced sequence at once and is used
//! for training. The inference path decodes one position at a time with a
//! key/value cache. Both use the same kernels in the same order, so they
//! agree bit for bit.

use super::matrix::{self, Matrix};
use super::params::{
    AttentionWeights, FeedForwardWeights, ModelConfig, NormWeights, Parameters, Weights,
    LAYER_NORM_EPS,
};
use super::tape::{Tape, Var};
use crate::corpus::OutputLayout;
use crate::scalar::Scalar;
use crate::{Error, Result};

fn check_len(cfg: &ModelConfig, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Validation("empty input sentence".into()));
    }
    if n > cfg.max_len {
        return Err(Error::Length {
            len: n,
            max: cfg.max_len,
        });
    }
    Ok(())
}

fn check_token_ids(cfg: &ModelConfig, token_ids: &[usize]) -> Result<()> {
    check_len(cfg, token_ids.len())?;
    if let Some(&bad) = token_ids.iter().find(|&&t| t >= cfg.token_rows()) {
        return Err(Error::Validation(format!(
            "token id {bad} outside the {} surface-token rows",
            cfg.token_rows()
        )));
    }
    Ok(())
}

fn causal_mask(rows: usize) -> Vec<bool> {
    (0..rows * rows).map(|i| i % rows <= i / rows).collect()
}

// ---------------------------------------------------------------------------
// Tape path
// ---------------------------------------------------------------------------

/// Copies every weight onto `tape` as a leaf.
pub fn bind<T: Scalar>(tape: &mut Tape<T>, params: &Parameters<T>) -> Weights<Var> {
    params.weights.map(&mut |m| tape.leaf(m.clone()))
}

fn attention_tape<T: Scalar>(
    tape: &mut Tape<T>,
    w: &AttentionWeights<Var>,
    query_in: Var,
    kv_in: Var,
    causal: bool,
    d: usize,
) -> Var {
    let q = tape.matmul(query_in, w.wq);
    let k = tape.matmul(kv_in, w.wk);
    let v = tape.matmul(kv_in, w.wv);
    let scores = tape.matmul_bt(q, k);
    let scores = tape.scale(scores, T::one() / T::of_usize(d).sqrt());
    let mask = causal.then(|| causal_mask(tape.value(scores).rows()));
    let probs = tape.softmax_rows(scores, mask.as_deref());
    let ctx = tape.matmul(probs, v);
    tape.matmul(ctx, w.wo)
}

fn feed_forward_tape<T: Scalar>(tape: &mut Tape<T>, w: &FeedForwardWeights<Var>, x: Var) -> Var {
    let h = tape.matmul(x, w.w1);
    let h = tape.add_row(h, w.b1);
    let h = tape.relu(h);
    let o = tape.matmul(h, w.w2);
    tape.add_row(o, w.b2)
}

fn residual_norm_tape<T: Scalar>(tape: &mut Tape<T>, w: &NormWeights<Var>, x: Var, delta: Var) -> Var {
    let s = tape.add(x, delta);
    tape.layer_norm(s, w.gamma, w.beta, T::of(LAYER_NORM_EPS))
}

/// Tape nodes produced by one teacher-forced forward pass.
pub struct SequenceForward {
    /// Encoder output `H^e`, `n × d`.
    pub encoded: Var,
    /// Decoder hidden state for every target position, `T × d`.
    pub hidden: Var,
    /// Pointer logits `[EOS; types; H^e] · h`, `T × (1 + K + n)`.
    pub logits: Var,
}

/// Runs encoder and decoder over `token_ids` with the decoder fed
/// `[BOS, targets[0], …, targets[T-2]]`.
pub fn forward_tape<T: Scalar>(
    tape: &mut Tape<T>,
    w: &Weights<Var>,
    cfg: &ModelConfig,
    token_ids: &[usize],
    targets: &[usize],
) -> Result<SequenceForward> {
    check_token_ids(cfg, token_ids)?;
    let n = token_ids.len();
    let layout = OutputLayout::new(cfg.num_types, n);
    if targets.is_empty() || targets.len() > cfg.max_target_len {
        return Err(Error::Length {
            len: targets.len(),
            max: cfg.max_target_len,
        });
    }
    for &t in targets {
        layout.kind(t)?;
    }

    // encoder
    let tok = tape.gather_rows(w.token_embedding, token_ids);
    let positions: Vec<usize> = (0..n).collect();
    let pos = tape.gather_rows(w.enc_positional, &positions);
    let x0 = tape.add(tok, pos);
    let enc = &w.encoder;
    let a = attention_tape(tape, &enc.attn, x0, x0, false, cfg.d);
    let x1 = residual_norm_tape(tape, &enc.norm1, x0, a);
    let f = feed_forward_tape(tape, &enc.ff, x1);
    let encoded = residual_norm_tape(tape, &enc.norm2, x1, f);

    // decoder inputs: row 0 = BOS, then output index i -> row i + 1
    let type_ids: Vec<usize> = (0..cfg.num_types).map(|t| cfg.type_row(t)).collect();
    let type_rows = tape.gather_rows(w.token_embedding, &type_ids);
    let input_table = tape.concat_rows(&[w.bos, w.eos, type_rows, x0]);
    let mut input_rows = Vec::with_capacity(targets.len());
    input_rows.push(0);
    input_rows.extend(targets[..targets.len() - 1].iter().map(|&i| i + 1));
    let z = tape.gather_rows(input_table, &input_rows);
    let dec_positions: Vec<usize> = (0..targets.len()).collect();
    let dpos = tape.gather_rows(w.dec_positional, &dec_positions);
    let z0 = tape.add(z, dpos);

    let dec = &w.decoder;
    let s = attention_tape(tape, &dec.self_attn, z0, z0, true, cfg.d);
    let z1 = residual_norm_tape(tape, &dec.norm1, z0, s);
    let c = attention_tape(tape, &dec.cross_attn, z1, encoded, false, cfg.d);
    let z2 = residual_norm_tape(tape, &dec.norm2, z1, c);
    let f = feed_forward_tape(tape, &dec.ff, z2);
    let hidden = residual_norm_tape(tape, &dec.norm3, z2, f);

    let candidates = tape.concat_rows(&[w.eos, type_rows, encoded]);
    let logits = tape.matmul_bt(hidden, candidates);
    Ok(SequenceForward {
        encoded,
        hidden,
        logits,
    })
}

// ---------------------------------------------------------------------------
// Inference path
// ---------------------------------------------------------------------------

fn attention_values<T: Scalar>(
    w: &AttentionWeights<Matrix<T>>,
    query_in: &Matrix<T>,
    keys: &Matrix<T>,
    values: &Matrix<T>,
    mask: Option<&[bool]>,
    d: usize,
) -> Matrix<T> {
    let q = matrix::matmul(query_in, &w.wq);
    let scale = T::one() / T::of_usize(d).sqrt();
    let mut scores = matrix::matmul_bt(&q, keys).map(|x| x * scale);
    let cols = scores.cols();
    for r in 0..scores.rows() {
        let m = mask.map(|m| &m[r * cols..(r + 1) * cols]);
        matrix::softmax_in_place(scores.row_mut(r), m);
    }
    let ctx = matrix::matmul(&scores, values);
    matrix::matmul(&ctx, &w.wo)
}

fn feed_forward_values<T: Scalar>(w: &FeedForwardWeights<Matrix<T>>, x: &Matrix<T>) -> Matrix<T> {
    let h = matrix::relu(&matrix::add_row(&matrix::matmul(x, &w.w1), &w.b1));
    matrix::add_row(&matrix::matmul(&h, &w.w2), &w.b2)
}

fn residual_norm_values<T: Scalar>(w: &NormWeights<Matrix<T>>, x: &Matrix<T>, delta: &Matrix<T>) -> Matrix<T> {
    matrix::layer_norm(&matrix::add(x, delta), &w.gamma, &w.beta, T::of(LAYER_NORM_EPS))
}

/// Encoder output `H^e` for one sentence plus what the decoder reuses.
#[derive(Clone, Debug)]
pub struct EncoderOutput<T> {
    pub token_ids: Vec<usize>,
    /// `n × d`.
    pub hidden: Matrix<T>,
    /// Encoder input rows (token + position); decoder inputs for pointers.
    input_rows: Matrix<T>,
    cross_keys: Matrix<T>,
    cross_values: Matrix<T>,
    /// `[EOS; type markers; H^e]`, the rows scored against `h^d_t`.
    candidates: Matrix<T>,
}

impl<T: Scalar> EncoderOutput<T> {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn candidates(&self) -> &Matrix<T> {
        &self.candidates
    }
}

pub fn encode<T: Scalar>(params: &Parameters<T>, token_ids: &[usize]) -> Result<EncoderOutput<T>> {
    let cfg = &params.config;
    let w = &params.weights;
    check_token_ids(cfg, token_ids)?;
    let n = token_ids.len();
    let tok = w.token_embedding.select_rows(token_ids);
    let positions: Vec<usize> = (0..n).collect();
    let x0 = matrix::add(&tok, &w.enc_positional.select_rows(&positions));
    let enc = &w.encoder;
    let k = matrix::matmul(&x0, &enc.attn.wk);
    let v = matrix::matmul(&x0, &enc.attn.wv);
    let a = attention_values(&enc.attn, &x0, &k, &v, None, cfg.d);
    let x1 = residual_norm_values(&enc.norm1, &x0, &a);
    let f = feed_forward_values(&enc.ff, &x1);
    let hidden = residual_norm_values(&enc.norm2, &x1, &f);

    let cross = &w.decoder.cross_attn;
    let cross_keys = matrix::matmul(&hidden, &cross.wk);
    let cross_values = matrix::matmul(&hidden, &cross.wv);

    let type_ids: Vec<usize> = (0..cfg.num_types).map(|t| cfg.type_row(t)).collect();
    let type_rows = w.token_embedding.select_rows(&type_ids);
    let mut cand = w.eos.as_slice().to_vec();
    cand.extend_from_slice(type_rows.as_slice());
    cand.extend_from_slice(hidden.as_slice());
    let candidates = Matrix::from_vec(1 + cfg.num_types + n, cfg.d, cand)?;

    Ok(EncoderOutput {
        token_ids: token_ids.to_vec(),
        hidden,
        input_rows: x0,
        cross_keys,
        cross_values,
        candidates,
    })
}

/// Last decoder hidden state `h^d_t` after consuming a prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState<T> {
    /// `1 × d`.
    pub last_hidden: Matrix<T>,
    /// Number of generated indices consumed (BOS excluded).
    pub prefix_len: usize,
}

/// Decoder that consumes one output index at a time.
pub struct IncrementalDecoder<'a, T> {
    params: &'a Parameters<T>,
    enc: &'a EncoderOutput<T>,
    inputs: Vec<T>,
    keys: Vec<T>,
    values: Vec<T>,
    steps: usize,
}

impl<'a, T: Scalar> IncrementalDecoder<'a, T> {
    pub fn new(params: &'a Parameters<T>, enc: &'a EncoderOutput<T>) -> Self {
        Self {
            params,
            enc,
            inputs: Vec::new(),
            keys: Vec::new(),
            values: Vec::new(),
            steps: 0,
        }
    }

    fn input_row(&self, index: Option<usize>) -> Result<Vec<T>> {
        let cfg = &self.params.config;
        let w = &self.params.weights;
        let layout = OutputLayout::new(cfg.num_types, self.enc.len());
        let row = match index {
            None => w.bos.as_slice().to_vec(),
            Some(i) => match layout.kind(i)? {
                crate::corpus::IndexKind::Eos => w.eos.as_slice().to_vec(),
                crate::corpus::IndexKind::Type(t) => w.token_embedding.row(cfg.type_row(t)).to_vec(),
                crate::corpus::IndexKind::Pointer(p) => self.enc.input_rows.row(p).to_vec(),
            },
        };
        Ok(row)
    }

    /// Feeds BOS (`None`) or a generated index and returns the new state.
    pub fn push(&mut self, index: Option<usize>) -> Result<DecoderState<T>> {
        let cfg = &self.params.config;
        let d = cfg.d;
        if self.steps >= cfg.max_target_len {
            return Err(Error::Length {
                len: self.steps + 1,
                max: cfg.max_target_len,
            });
        }
        if (self.steps == 0) != index.is_none() {
            return Err(Error::Validation("BOS must be fed first and only once".into()));
        }
        let emb = self.input_row(index)?;
        let dpos = self.params.weights.dec_positional.row(self.steps);
        let z0 = Matrix::row_vector(emb.iter().zip(dpos).map(|(&a, &b)| a + b).collect());

        let dec = &self.params.weights.decoder;
        self.keys
            .extend_from_slice(matrix::matmul(&z0, &dec.self_attn.wk).as_slice());
        self.values
            .extend_from_slice(matrix::matmul(&z0, &dec.self_attn.wv).as_slice());
        self.inputs.extend_from_slice(z0.as_slice());
        self.steps += 1;
        let keys = Matrix::from_vec(self.steps, d, self.keys.clone())?;
        let values = Matrix::from_vec(self.steps, d, self.values.clone())?;

        let s = attention_values(&dec.self_attn, &z0, &keys, &values, None, d);
        let z1 = residual_norm_values(&dec.norm1, &z0, &s);
        let c = attention_values(
            &dec.cross_attn,
            &z1,
            &self.enc.cross_keys,
            &self.enc.cross_values,
            None,
            d,
        );
        let z2 = residual_norm_values(&dec.norm2, &z1, &c);
        let f = feed_forward_values(&dec.ff, &z2);
        let h = residual_norm_values(&dec.norm3, &z2, &f);
        Ok(DecoderState {
            last_hidden: h,
            prefix_len: self.steps - 1,
        })
    }
}

/// `h^d_t` for the given prefix, recomputed from scratch.
pub fn decode_step<T: Scalar>(
    params: &Parameters<T>,
    enc: &EncoderOutput<T>,
    prefix: &[usize],
) -> Result<DecoderState<T>> {
    let mut dec = IncrementalDecoder::new(params, enc);
    let mut state = dec.push(None)?;
    for &i in prefix {
        state = dec.push(Some(i))?;
    }
    Ok(state)
}

/// Logits `[EOS; types; pointers] · h^d_t`, length `1 + K + n`.
pub fn pointer_scores<T: Scalar>(enc: &EncoderOutput<T>, state: &DecoderState<T>) -> Vec<T> {
    matrix::matmul_bt(&state.last_hidden, &enc.candidates).into_vec()
}
