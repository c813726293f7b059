//! Synthetic nested-entity corpora.
//!
//! Each sentence holds one to four disjoint top-level entities. With
//! probability `nesting_rate` a top-level entity gets one inner entity
//! whose head and tail offsets are `|round(N(0, offset_sigma))|`. Entity
//! boundaries carry marker tokens naming the boundary role and type, e.g.
//! `<B0b1>` where an outer type-0 entity and an inner type-1 entity start
//! on the same token. Everything else is uniform filler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, EntityTriplet, Sentence, TypeVocabulary};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_sentences: usize,
    /// Size of the base word list; `num_types` entries act as type tags,
    /// the remainder are filler words.
    pub vocab_size: usize,
    pub num_types: usize,
    pub max_len: usize,
    pub nesting_rate: f64,
    pub offset_sigma: f64,
    pub seed: u64,
    /// Replaces the Gaussian offsets with a constant.
    #[serde(default)]
    pub fixed_offset: Option<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_sentences: 500,
            vocab_size: 50,
            num_types: 2,
            max_len: 24,
            nesting_rate: 0.5,
            offset_sigma: 1.5,
            seed: 0,
            fixed_offset: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.max_len < 4 {
            return fail(format!("max_len must be at least 4, got {}", self.max_len));
        }
        if self.num_types == 0 {
            return fail("num_types must be at least 1".into());
        }
        if self.vocab_size < self.num_types + 4 {
            return fail(format!(
                "vocab_size {} must be at least num_types + 4 = {}",
                self.vocab_size,
                self.num_types + 4
            ));
        }
        if !(0.0..=1.0).contains(&self.nesting_rate) {
            return fail(format!("nesting_rate {} outside [0, 1]", self.nesting_rate));
        }
        if !(self.offset_sigma > 0.0 && self.offset_sigma.is_finite()) {
            return fail(format!("offset_sigma must be positive, got {}", self.offset_sigma));
        }
        Ok(())
    }

    fn filler_count(&self) -> usize {
        self.vocab_size - self.num_types
    }
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Generator<'_> {
    fn offset(&mut self) -> usize {
        match self.cfg.fixed_offset {
            Some(o) => o,
            None => self.normal.sample(&mut self.rng).round().abs() as usize,
        }
    }

    /// Head offset, inner length, tail offset of a nested entity, clipped to
    /// `room` tokens. At least one offset stays positive.
    fn nested_shape(&mut self, room: usize) -> (usize, usize, usize) {
        let mut head = self.offset();
        let mut tail = self.offset();
        if head == 0 && tail == 0 {
            if self.rng.gen_bool(0.5) {
                head = 1;
            } else {
                tail = 1;
            }
        }
        let mut inner = self.rng.gen_range(1..=3);
        while head + inner + tail > room {
            if inner > 1 {
                inner -= 1;
            } else if head >= tail && head + tail > 1 {
                head -= 1;
            } else if tail > 0 && head + tail > 1 {
                tail -= 1;
            } else {
                break;
            }
        }
        (head, inner, tail)
    }

    fn sentence(&mut self) -> Sentence {
        let cfg = self.cfg;
        let k = cfg.num_types;
        let mut entities = Vec::new();
        let mut cursor = self.rng.gen_range(0..=2usize).min(cfg.max_len - 2);
        let count = self.rng.gen_range(1..=4);
        for _ in 0..count {
            let outer_type = self.rng.gen_range(0..k);
            let room = cfg.max_len.saturating_sub(cursor);
            let nested = self.rng.gen_bool(cfg.nesting_rate);
            let (len, inner) = if nested {
                let (head, inner_len, tail) = self.nested_shape(room);
                let len = head + inner_len + tail;
                let inner_type = self.rng.gen_range(0..k);
                (len, Some((head, len - 1 - tail, inner_type)))
            } else {
                (self.rng.gen_range(1..=3usize).min(room), None)
            };
            if len == 0 || len > room {
                break;
            }
            entities.push(EntityTriplet::new(cursor, cursor + len - 1, outer_type));
            if let Some((s, e, t)) = inner {
                entities.push(EntityTriplet::new(cursor + s, cursor + e, t));
            }
            cursor += len + self.rng.gen_range(0..=2usize);
            if cursor >= cfg.max_len {
                break;
            }
        }
        let last_end = entities.iter().map(|e| e.end + 1).max().unwrap_or(1);
        let trailing = self.rng.gen_range(0..=2usize);
        let n = (last_end + trailing).min(cfg.max_len);

        let mut tokens: Vec<String> = (0..n)
            .map(|_| format!("w{}", self.rng.gen_range(0..cfg.filler_count())))
            .collect();
        entities.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
        write_markers(&mut tokens, &entities);
        Sentence { tokens, entities }
    }
}

/// Overwrites boundary tokens with role/type markers. Entities must be
/// sorted outer-first.
fn write_markers(tokens: &mut [String], entities: &[EntityTriplet]) {
    let mut events: Vec<Vec<(u8, String)>> = vec![Vec::new(); tokens.len()];
    for e in entities {
        let inner = entities.iter().any(|o| o.strictly_contains(e));
        let (b, end) = if inner { ('b', 'e') } else { ('B', 'E') };
        let start_rank = if inner { 1 } else { 0 };
        let end_rank = if inner { 2 } else { 3 };
        events[e.start].push((start_rank, format!("{b}{}", e.type_id)));
        events[e.end].push((end_rank, format!("{end}{}", e.type_id)));
    }
    for (tok, mut ev) in tokens.iter_mut().zip(events) {
        if ev.is_empty() {
            continue;
        }
        ev.sort();
        let body: String = ev.into_iter().map(|(_, s)| s).collect();
        *tok = format!("<{body}>");
    }
}

/// Deterministic for a given config.
pub fn synth_corpus(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut g = Generator {
        cfg: config,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        normal: Normal::new(0.0, config.offset_sigma)
            .map_err(|e| Error::Validation(e.to_string()))?,
    };
    let sentences = (0..config.num_sentences).map(|_| g.sentence()).collect();
    Dataset::new(sentences, TypeVocabulary::numbered(config.num_types)?)
}
