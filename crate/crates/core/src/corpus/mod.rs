//! Sentences, entity triplets, and everything computed directly from them:
//! JSONL I/O, target-sequence encoding, span-level scoring, nested-pair
//! statistics, and the synthetic corpus generator.

mod eval;
mod io;
mod stats;
mod synth;
mod target;

pub use eval::{boundary_f1, span_f1, Prf};
pub use io::{load_jsonl, parse_jsonl, write_jsonl};
pub use stats::{
    boundary_histogram, fit_gaussian, nested_pairs, BoundaryHistogram, GaussianFit, NestedPair,
};
pub use synth::{synth_corpus, SynthConfig};
pub use target::{decode_output, encode_target, Decoded, IndexKind, OutputLayout, TargetSequence};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One entity span: 0-based inclusive token bounds and a type id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityTriplet {
    pub start: usize,
    pub end: usize,
    pub type_id: usize,
}

impl EntityTriplet {
    pub fn new(start: usize, end: usize, type_id: usize) -> Self {
        Self {
            start,
            end,
            type_id,
        }
    }

    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    /// True when `self` contains `other` and the two spans differ.
    pub fn strictly_contains(&self, other: &EntityTriplet) -> bool {
        self.start <= other.start && other.end <= self.end && self.span() != other.span()
    }
}

/// Ordered list of entity type labels; type id `i` is `names[i]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeVocabulary {
    names: Vec<String>,
}

impl TypeVocabulary {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Validation("type vocabulary is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Validation(format!("duplicate type name `{n}`")));
            }
        }
        Ok(Self { names })
    }

    /// `T0, T1, …` for synthetic corpora.
    pub fn numbered(k: usize) -> Result<Self> {
        Self::new((0..k).map(|i| format!("T{i}")))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// A tokenised sentence with its gold entities in stored order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub entities: Vec<EntityTriplet>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self, num_types: usize) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::Validation("sentence has no tokens".into()));
        }
        for e in &self.entities {
            if e.start > e.end || e.end >= n {
                return Err(Error::Validation(format!(
                    "span ({}, {}) invalid for a {n}-token sentence",
                    e.start, e.end
                )));
            }
            if e.type_id >= num_types {
                return Err(Error::Validation(format!(
                    "type id {} out of range for {num_types} types",
                    e.type_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub sentences: Vec<Sentence>,
    pub type_vocab: TypeVocabulary,
}

impl Dataset {
    pub fn new(sentences: Vec<Sentence>, type_vocab: TypeVocabulary) -> Result<Self> {
        for s in &sentences {
            s.validate(type_vocab.len())?;
        }
        Ok(Self {
            sentences,
            type_vocab,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn gold(&self) -> Vec<Vec<EntityTriplet>> {
        self.sentences.iter().map(|s| s.entities.clone()).collect()
    }

    pub fn max_entities(&self) -> usize {
        self.sentences.iter().map(|s| s.entities.len()).max().unwrap_or(0)
    }

    pub fn max_len(&self) -> usize {
        self.sentences.iter().map(Sentence::len).max().unwrap_or(0)
    }
}

/// Maps surface tokens to embedding rows. Id 0 is reserved for unknown
/// tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenVocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TokenVocab {
    pub const UNK: &'static str = "<unk>";

    /// Collects tokens in first-seen order.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Self {
        let mut tokens = vec![Self::UNK.to_string()];
        let mut index = HashMap::from([(Self::UNK.to_string(), 0)]);
        for s in sentences {
            for t in &s.tokens {
                if !index.contains_key(t) {
                    index.insert(t.clone(), tokens.len());
                    tokens.push(t.clone());
                }
            }
        }
        Self { tokens, index }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn encode(&self, sentence: &Sentence) -> Vec<usize> {
        sentence.tokens.iter().map(|t| self.id(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_rejects_duplicates_and_empty() {
        assert!(TypeVocabulary::new(Vec::<String>::new()).is_err());
        assert!(TypeVocabulary::new(["PER", "PER"]).is_err());
        let v = TypeVocabulary::new(["PER", "GPE"]).unwrap();
        assert_eq!(v.id("GPE"), Some(1));
        assert_eq!(v.name(0), Some("PER"));
    }

    #[test]
    fn sentence_validation() {
        let s = Sentence {
            tokens: vec!["a".into(), "b".into(), "c".into()],
            entities: vec![EntityTriplet::new(0, 5, 0)],
        };
        assert!(s.validate(1).is_err());
        let s = Sentence {
            tokens: vec!["a".into()],
            entities: vec![EntityTriplet::new(0, 0, 3)],
        };
        assert!(s.validate(2).is_err());
    }

    #[test]
    fn token_vocab_maps_unknown_to_zero() {
        let s = Sentence {
            tokens: vec!["x".into(), "y".into(), "x".into()],
            entities: vec![],
        };
        let v = TokenVocab::build([&s]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.encode(&s), vec![1, 2, 1]);
        assert_eq!(v.id("zzz"), 0);
        let round = TokenVocab::from_tokens(v.tokens().to_vec());
        assert_eq!(round.id("y"), 2);
    }
}
