use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, EntityTriplet, Sentence, TypeVocabulary};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct RawEntity {
    start: usize,
    end: usize,
    #[serde(rename = "type")]
    type_name: String,
}

#[derive(Serialize, Deserialize)]
struct RawSentence {
    tokens: Vec<String>,
    entities: Vec<RawEntity>,
}

pub fn load_jsonl(path: impl AsRef<Path>, type_vocab: &TypeVocabulary) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, type_vocab)
}

/// Parses JSONL text; blank lines are skipped. Line numbers in errors are
/// 1-based.
pub fn parse_jsonl(text: &str, type_vocab: &TypeVocabulary) -> Result<Dataset> {
    let mut sentences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSentence = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut entities = Vec::with_capacity(raw.entities.len());
        for e in raw.entities {
            let type_id = type_vocab
                .id(&e.type_name)
                .ok_or_else(|| Error::UnknownType(e.type_name.clone()))?;
            entities.push(EntityTriplet::new(e.start, e.end, type_id));
        }
        let sentence = Sentence {
            tokens: raw.tokens,
            entities,
        };
        sentence.validate(type_vocab.len()).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("line {line_no}: {m}")),
            other => other,
        })?;
        sentences.push(sentence);
    }
    Ok(Dataset {
        sentences,
        type_vocab: type_vocab.clone(),
    })
}

pub fn write_jsonl(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for s in &dataset.sentences {
        let raw = RawSentence {
            tokens: s.tokens.clone(),
            entities: s
                .entities
                .iter()
                .map(|e| RawEntity {
                    start: e.start,
                    end: e.end,
                    type_name: dataset.type_vocab.name(e.type_id).unwrap_or("?").to_string(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &raw)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> TypeVocabulary {
        TypeVocabulary::new(["PER", "GPE"]).unwrap()
    }

    #[test]
    fn loads_single_entity() {
        let d = parse_jsonl(
            r#"{"tokens":["a","b"],"entities":[{"start":0,"end":1,"type":"PER"}]}"#,
            &vocab(),
        )
        .unwrap();
        assert_eq!(d.sentences[0].entities, vec![EntityTriplet::new(0, 1, 0)]);
    }

    #[test]
    fn reports_errors() {
        let v = vocab();
        let bad_span = r#"{"tokens":["a","b","c"],"entities":[{"start":0,"end":5,"type":"PER"}]}"#;
        assert!(matches!(parse_jsonl(bad_span, &v), Err(Error::Validation(_))));
        let bad_type = r#"{"tokens":["a"],"entities":[{"start":0,"end":0,"type":"ORG"}]}"#;
        assert!(matches!(parse_jsonl(bad_type, &v), Err(Error::UnknownType(_))));
        let text = format!("{}\n{{not json", r#"{"tokens":["a"],"entities":[]}"#);
        assert!(matches!(parse_jsonl(&text, &v), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn write_then_load() {
        let v = vocab();
        let d = parse_jsonl(
            r#"{"tokens":["x","y","z"],"entities":[{"start":1,"end":2,"type":"GPE"},{"start":0,"end":2,"type":"PER"}]}"#,
            &v,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_jsonl(&p, &d).unwrap();
        assert_eq!(load_jsonl(&p, &v).unwrap(), d);
    }
}
