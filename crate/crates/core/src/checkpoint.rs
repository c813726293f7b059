//! JSON checkpoints: model config, vocabularies, weights and optimizer
//! moments. Values are stored as `f64`, so both scalar types round-trip
//! bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenVocab, TypeVocabulary};
use crate::gpa::GpaConfig;
use crate::nn::matrix::MatrixRecord;
use crate::nn::optim::AdamWState;
use crate::nn::{Matrix, ModelConfig, Parameters, Weights};
use crate::scalar::Scalar;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    #[serde(flatten)]
    pub record: MatrixRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerRecord {
    pub step: u64,
    pub m: Vec<NamedTensor>,
    pub v: Vec<NamedTensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub gpa: GpaConfig,
    /// Decoding bound used during training.
    pub max_triplets: usize,
    pub types: TypeVocabulary,
    pub tokens: Vec<String>,
    pub weights: Vec<NamedTensor>,
    pub optimizer: Option<OptimizerRecord>,
}

fn records<T: Scalar>(w: &Weights<Matrix<T>>) -> Vec<NamedTensor> {
    w.names()
        .into_iter()
        .zip(w.leaves())
        .map(|(name, m)| NamedTensor {
            name,
            record: MatrixRecord::from(m),
        })
        .collect()
}

fn restore<T: Scalar>(into: &mut Weights<Matrix<T>>, from: &[NamedTensor]) -> Result<()> {
    let names = into.names();
    if names.len() != from.len() {
        return Err(Error::Validation(format!(
            "checkpoint holds {} tensors, model expects {}",
            from.len(),
            names.len()
        )));
    }
    for ((dst, name), src) in into.leaves_mut().into_iter().zip(&names).zip(from) {
        if &src.name != name || src.record.shape != dst.shape() {
            return Err(Error::Validation(format!(
                "tensor {} {:?} does not match expected {name} {:?}",
                src.name,
                src.record.shape,
                dst.shape()
            )));
        }
        *dst = src.record.to_matrix()?;
    }
    Ok(())
}

impl Checkpoint {
    pub fn new<T: Scalar>(
        params: &Parameters<T>,
        optimizer: Option<&AdamWState<T>>,
        gpa: &GpaConfig,
        max_triplets: usize,
        types: &TypeVocabulary,
        tokens: &TokenVocab,
    ) -> Result<Self> {
        if !params.weights.is_finite() {
            return Err(Error::Validation("refusing to checkpoint non-finite weights".into()));
        }
        if max_triplets == 0 || max_triplets > params.config.max_decodable_triplets() {
            return Err(Error::Validation(format!("decoding bound {max_triplets} out of range")));
        }
        Ok(Self {
            version: FORMAT_VERSION,
            model: params.config.clone(),
            gpa: *gpa,
            max_triplets,
            types: types.clone(),
            tokens: tokens.tokens().to_vec(),
            weights: records(&params.weights),
            optimizer: optimizer.map(|s| OptimizerRecord {
                step: s.step,
                m: records(&s.m),
                v: records(&s.v),
            }),
        })
    }

    pub fn params<T: Scalar>(&self) -> Result<Parameters<T>> {
        let mut p = Parameters::init(self.model.clone())?;
        restore(&mut p.weights, &self.weights)?;
        if p.config.num_types != self.types.len() {
            return Err(Error::Validation("type vocabulary does not match the model".into()));
        }
        Ok(p)
    }

    pub fn optimizer<T: Scalar>(&self) -> Result<Option<AdamWState<T>>> {
        let Some(rec) = &self.optimizer else { return Ok(None) };
        let like = self.params::<T>()?.weights;
        let mut st = AdamWState::new(&like);
        st.step = rec.step;
        restore(&mut st.m, &rec.m)?;
        restore(&mut st.v, &rec.v)?;
        Ok(Some(st))
    }

    pub fn token_vocab(&self) -> TokenVocab {
        TokenVocab::from_tokens(self.tokens.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.version != FORMAT_VERSION {
            return Err(Error::Validation(format!("unsupported checkpoint version {}", ck.version)));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;

    fn parts() -> (TypeVocabulary, TokenVocab) {
        let s = Sentence {
            tokens: vec!["a".into(), "b".into()],
            entities: vec![],
        };
        (TypeVocabulary::numbered(2).unwrap(), TokenVocab::build([&s]))
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (types, tokens) = parts();
        let p = Parameters::<f64>::init(ModelConfig::new(10, 2, 4, 5, 7)).unwrap();
        let mut st = AdamWState::new(&p.weights);
        st.step = 3;
        st.m = p.weights.clone();
        st.m.scale_assign(1.0 / 3.0);
        st.v = p.weights.clone();
        st.v.scale_assign(1e-300);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        Checkpoint::new(&p, Some(&st), &GpaConfig::default(), 3, &types, &tokens)
            .unwrap()
            .save(&path)
            .unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.params::<f64>().unwrap(), p);
        assert_eq!(ck.optimizer::<f64>().unwrap().unwrap(), st);
        assert_eq!(ck.token_vocab().tokens(), tokens.tokens());

        let p32 = p.cast::<f32>();
        Checkpoint::new(&p32, None, &GpaConfig::default(), 3, &types, &tokens)
            .unwrap()
            .save(&path)
            .unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.params::<f32>().unwrap(), p32);
        assert_eq!(ck.optimizer::<f32>().unwrap(), None);
    }

    #[test]
    fn mismatched_tensors_rejected() {
        let (types, tokens) = parts();
        let p = Parameters::<f64>::init(ModelConfig::new(10, 2, 4, 5, 7)).unwrap();
        let mut ck = Checkpoint::new(&p, None, &GpaConfig::default(), 3, &types, &tokens).unwrap();
        ck.model.d = 6;
        assert!(ck.params::<f64>().is_err());
        let mut ck = Checkpoint::new(&p, None, &GpaConfig::default(), 3, &types, &tokens).unwrap();
        ck.weights.pop();
        assert!(ck.params::<f64>().is_err());
    }
}
