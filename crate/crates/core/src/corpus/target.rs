//! Flattened output sequences and the index layout shared with the decoder.
//!
//! Output index 0 is end-of-sequence, `1..=K` are entity types, and
//! `K+1..=K+n` point at input tokens `0..n`.

use super::{EntityTriplet, Sentence, TypeVocabulary};
use crate::{Error, Result};

/// What an output index refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndexKind {
    Eos,
    /// 0-based type id.
    Type(usize),
    /// 0-based token position.
    Pointer(usize),
}

/// Index arithmetic for a sentence of `len` tokens and `num_types` types.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OutputLayout {
    pub num_types: usize,
    pub len: usize,
}

impl OutputLayout {
    pub const EOS: usize = 0;

    pub fn new(num_types: usize, len: usize) -> Self {
        Self { num_types, len }
    }

    /// Number of output indices, `1 + K + n`.
    pub fn size(&self) -> usize {
        1 + self.num_types + self.len
    }

    /// First pointer index.
    pub fn pointer_offset(&self) -> usize {
        1 + self.num_types
    }

    pub fn type_index(&self, type_id: usize) -> usize {
        type_id + 1
    }

    pub fn pointer_index(&self, position: usize) -> usize {
        self.pointer_offset() + position
    }

    pub fn kind(&self, index: usize) -> Result<IndexKind> {
        if index >= self.size() {
            return Err(Error::Validation(format!(
                "output index {index} outside [0, {}]",
                self.size() - 1
            )));
        }
        Ok(if index == Self::EOS {
            IndexKind::Eos
        } else if index <= self.num_types {
            IndexKind::Type(index - 1)
        } else {
            IndexKind::Pointer(index - self.pointer_offset())
        })
    }

    /// Parses one start/end/type window; `None` for anything malformed.
    pub fn parse_window(&self, window: &[usize]) -> Option<EntityTriplet> {
        if window.len() != 3 {
            return None;
        }
        match (
            self.kind(window[0]).ok()?,
            self.kind(window[1]).ok()?,
            self.kind(window[2]).ok()?,
        ) {
            (IndexKind::Pointer(s), IndexKind::Pointer(e), IndexKind::Type(t)) if s <= e => {
                Some(EntityTriplet::new(s, e, t))
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetSequence {
    pub indices: Vec<usize>,
}

/// Gold entities in stored order, flattened to `[s, e, t, …, EOS]`.
pub fn encode_target(sentence: &Sentence, vocab: &TypeVocabulary) -> TargetSequence {
    let layout = OutputLayout::new(vocab.len(), sentence.len());
    let mut indices = Vec::with_capacity(3 * sentence.entities.len() + 1);
    for e in &sentence.entities {
        indices.push(layout.pointer_index(e.start));
        indices.push(layout.pointer_index(e.end));
        indices.push(layout.type_index(e.type_id));
    }
    indices.push(OutputLayout::EOS);
    TargetSequence { indices }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Decoded {
    pub triplets: Vec<EntityTriplet>,
    pub malformed: usize,
}

/// Reads windows of three until EOS appears at a window start or input
/// runs out. Malformed windows are counted, duplicates kept.
pub fn decode_output(indices: &[usize], vocab: &TypeVocabulary, n: usize) -> Result<Decoded> {
    let layout = OutputLayout::new(vocab.len(), n);
    for &i in indices {
        layout.kind(i)?;
    }
    let mut out = Decoded::default();
    for window in indices.chunks(3) {
        if window[0] == OutputLayout::EOS {
            break;
        }
        match layout.parse_window(window) {
            Some(t) => out.triplets.push(t),
            None => out.malformed += 1,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(k: usize) -> TypeVocabulary {
        TypeVocabulary::numbered(k).unwrap()
    }

    fn sentence(n: usize, entities: &[(usize, usize, usize)]) -> Sentence {
        Sentence {
            tokens: (0..n).map(|i| format!("w{i}")).collect(),
            entities: entities
                .iter()
                .map(|&(s, e, t)| EntityTriplet::new(s, e, t))
                .collect(),
        }
    }

    #[test]
    fn encode_shifts_by_type_count() {
        let s = sentence(5, &[(0, 2, 0)]);
        assert_eq!(encode_target(&s, &vocab(7)).indices, vec![8, 10, 1, 0]);
        assert_eq!(encode_target(&sentence(3, &[]), &vocab(7)).indices, vec![0]);
        let s = sentence(2, &[(0, 0, 0), (0, 1, 1)]);
        assert_eq!(
            encode_target(&s, &vocab(2)).indices,
            vec![3, 3, 1, 3, 4, 2, 0]
        );
    }

    #[test]
    fn decode_examples() {
        let v = vocab(7);
        let d = decode_output(&[8, 10, 1, 0], &v, 5).unwrap();
        assert_eq!(d.triplets, vec![EntityTriplet::new(0, 2, 0)]);
        assert_eq!(d.malformed, 0);
        assert_eq!(decode_output(&[0], &v, 5).unwrap(), Decoded::default());
        let d = decode_output(&[1, 10, 1, 0], &v, 5).unwrap();
        assert!(d.triplets.is_empty());
        assert_eq!(d.malformed, 1);
    }

    #[test]
    fn decode_counts_reversed_spans_and_truncated_windows() {
        let v = vocab(2);
        // (4, 3) is reversed, then a trailing 2-index window
        let d = decode_output(&[4, 3, 1, 3, 3], &v, 3).unwrap();
        assert_eq!(d.malformed, 2);
        // EOS mid-window does not terminate
        let d = decode_output(&[3, 0, 1, 3, 3, 2], &v, 3).unwrap();
        assert_eq!(d.malformed, 1);
        assert_eq!(d.triplets, vec![EntityTriplet::new(0, 0, 1)]);
    }

    #[test]
    fn decode_rejects_out_of_range() {
        assert!(decode_output(&[9], &vocab(2), 3).is_err());
    }

    #[test]
    fn layout_kinds() {
        let l = OutputLayout::new(2, 3);
        assert_eq!(l.size(), 6);
        assert_eq!(l.kind(0).unwrap(), IndexKind::Eos);
        assert_eq!(l.kind(2).unwrap(), IndexKind::Type(1));
        assert_eq!(l.kind(3).unwrap(), IndexKind::Pointer(0));
        assert!(l.kind(6).is_err());
    }
}
