//! Learnable weights of the encoder/decoder and their initialisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{self, Matrix};
use crate::scalar::Scalar;
use crate::{Error, Result};

macro_rules! weight_group {
    (
        $(#[$meta:meta])*
        $name:ident { $($leaf:ident),* $(,)? ; $($group:ident : $gty:ident),* $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<M> {
            $(pub $leaf: M,)*
            $(pub $group: $gty<M>,)*
        }

        impl<M> $name<M> {
            pub fn map<N>(&self, f: &mut impl FnMut(&M) -> N) -> $name<N> {
                $name {
                    $($leaf: f(&self.$leaf),)*
                    $($group: self.$group.map(f),)*
                }
            }

            pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a M)) {
                $(f(format!("{prefix}{}", stringify!($leaf)), &self.$leaf);)*
                $(self.$group.visit(&format!("{prefix}{}.", stringify!($group)), f);)*
            }

            pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut M)) {
                $(f(&mut self.$leaf);)*
                $(self.$group.visit_mut(f);)*
            }

            /// Mutable references in the same order as `visit`.
            #[allow(unused_mut)]
            pub fn leaves_mut(&mut self) -> Vec<&mut M> {
                let mut out: Vec<&mut M> = vec![$(&mut self.$leaf,)*];
                $(out.extend(self.$group.leaves_mut());)*
                out
            }
        }
    };
}

weight_group!(AttentionWeights { wq, wk, wv, wo; });
weight_group!(FeedForwardWeights { w1, b1, w2, b2; });
weight_group!(NormWeights { gamma, beta; });
weight_group!(EncoderWeights {
    ;
    attn: AttentionWeights,
    norm1: NormWeights,
    ff: FeedForwardWeights,
    norm2: NormWeights,
});
weight_group!(DecoderWeights {
    ;
    self_attn: AttentionWeights,
    norm1: NormWeights,
    cross_attn: AttentionWeights,
    norm2: NormWeights,
    ff: FeedForwardWeights,
    norm3: NormWeights,
});
weight_group!(
    /// Every learnable tensor. `M` is `Matrix<T>` for values and gradients
    /// and `Var` for a copy bound to an autodiff tape.
    Weights {
        token_embedding,
        enc_positional,
        dec_positional,
        bos,
        eos,
        lambda_raw,
        mu_raw;
        encoder: EncoderWeights,
        decoder: DecoderWeights,
    }
);

impl<M> Weights<M> {
    pub fn leaves(&self) -> Vec<&M> {
        let mut out = Vec::new();
        self.visit("", &mut |_, m| out.push(m));
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit("", &mut |n, _| out.push(n));
        out
    }
}

impl<T: Scalar> Weights<Matrix<T>> {
    pub fn zeros_like(&self) -> Self {
        self.map(&mut |m| Matrix::zeros(m.rows(), m.cols()))
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.leaves_mut().into_iter().zip(other.leaves()) {
            a.add_assign(b);
        }
    }

    pub fn scale_assign(&mut self, s: T) {
        self.visit_mut(&mut |m| m.scale_assign(s));
    }

    pub fn sq_norm(&self) -> T {
        self.leaves()
            .iter()
            .flat_map(|m| m.as_slice().iter())
            .map(|&x| x * x)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.leaves().iter().all(|m| m.is_finite())
    }

    pub fn scalar_count(&self) -> usize {
        self.leaves().iter().map(|m| m.len()).sum()
    }
}

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Rows of the shared embedding table: surface tokens followed by one
    /// marker row per entity type.
    pub vocab_size: usize,
    pub num_types: usize,
    pub d: usize,
    pub ff_dim: usize,
    /// Longest input sentence.
    pub max_len: usize,
    /// Longest decoder input (BOS plus generated prefix).
    pub max_target_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, num_types: usize, d: usize, max_len: usize, seed: u64) -> Self {
        Self {
            vocab_size,
            num_types,
            d,
            ff_dim: 2 * d,
            max_len,
            max_target_len: 40,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.d < 4 || self.d % 2 != 0 {
            return fail(format!("d must be even and at least 4, got {}", self.d));
        }
        if self.num_types == 0 {
            return fail("num_types must be at least 1".into());
        }
        if self.vocab_size <= self.num_types {
            return fail(format!(
                "vocab_size {} leaves no surface-token rows beside {} type rows",
                self.vocab_size, self.num_types
            ));
        }
        if self.max_len == 0 || self.max_target_len < 4 || self.ff_dim == 0 {
            return fail("max_len, ff_dim and max_target_len must be positive".into());
        }
        Ok(())
    }

    /// Number of rows available for surface tokens.
    pub fn token_rows(&self) -> usize {
        self.vocab_size - self.num_types
    }

    /// Embedding row of 0-based type id `t`.
    pub fn type_row(&self, t: usize) -> usize {
        self.token_rows() + t
    }

    /// Largest triplet count whose full window sequence fits the decoder.
    pub fn max_decodable_triplets(&self) -> usize {
        (self.max_target_len - 1) / 3
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Model weights together with the architecture they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T> {
    pub config: ModelConfig,
    pub weights: Weights<Matrix<T>>,
}

impl<T: Scalar> Parameters<T> {
    /// Uniform(-1/√d, 1/√d) weights, unit layer-norm gains, zero biases,
    /// and both boundary-prior coefficients at π.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d;
        let bound = 1.0 / (d as f64).sqrt();
        let mut uniform = |r: usize, c: usize| -> Matrix<T> {
            let v = (0..r * c)
                .map(|_| T::of(rng.gen_range(-bound..bound)))
                .collect();
            Matrix::from_vec(r, c, v).expect("sized")
        };
        let attn = |uniform: &mut dyn FnMut(usize, usize) -> Matrix<T>| AttentionWeights {
            wq: uniform(d, d),
            wk: uniform(d, d),
            wv: uniform(d, d),
            wo: uniform(d, d),
        };
        let norm = || NormWeights {
            gamma: Matrix::row_vector(vec![T::one(); d]),
            beta: Matrix::zeros(1, d),
        };
        let ff = |uniform: &mut dyn FnMut(usize, usize) -> Matrix<T>| FeedForwardWeights {
            w1: uniform(d, config.ff_dim),
            b1: Matrix::zeros(1, config.ff_dim),
            w2: uniform(config.ff_dim, d),
            b2: Matrix::zeros(1, d),
        };
        let token_embedding = uniform(config.vocab_size, d);
        let enc_positional = uniform(config.max_len, d);
        let dec_positional = uniform(config.max_target_len, d);
        let bos = uniform(1, d);
        let eos = uniform(1, d);
        let encoder = EncoderWeights {
            attn: attn(&mut uniform),
            norm1: norm(),
            ff: ff(&mut uniform),
            norm2: norm(),
        };
        let decoder = DecoderWeights {
            self_attn: attn(&mut uniform),
            norm1: norm(),
            cross_attn: attn(&mut uniform),
            norm2: norm(),
            ff: ff(&mut uniform),
            norm3: norm(),
        };
        let pi_raw = Matrix::scalar(matrix::inverse_softplus(T::PI()));
        Ok(Self {
            weights: Weights {
                token_embedding,
                enc_positional,
                dec_positional,
                bos,
                eos,
                lambda_raw: pi_raw.clone(),
                mu_raw: pi_raw,
                encoder,
                decoder,
            },
            config,
        })
    }

    /// Head-boundary prior coefficient (always positive).
    pub fn lambda(&self) -> T {
        matrix::softplus(self.weights.lambda_raw.item())
    }

    /// Tail-boundary prior coefficient (always positive).
    pub fn mu(&self) -> T {
        matrix::softplus(self.weights.mu_raw.item())
    }

    /// Same weights in another scalar type.
    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            config: self.config.clone(),
            weights: self.weights.map(&mut |m| {
                Matrix::from_vec(
                    m.rows(),
                    m.cols(),
                    m.as_slice().iter().map(|&x| U::of(x.as_f64())).collect(),
                )
                .expect("same shape")
            }),
        }
    }
}
