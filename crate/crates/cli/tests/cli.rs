use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

const SMALL: &str = r#"
seed = 3
[data]
train = 40
dev = 12
test = 12
max_len = 16
[model]
d = 8
[train]
epochs = 2
rl_epochs = 1
[ablate]
seeds = [0, 1]
"#;

fn nestner(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_nestner"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), config).unwrap();
    let (code, err) = nestner(dir.path(), &["gen-data", "--config", "c.toml", "--out", "meta.json"]);
    assert_eq!(code, 0, "{err}");
    dir
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_data_is_sized_and_reproducible() {
    let a = setup(SMALL);
    let b = setup(SMALL);
    for (split, n) in [("train", 40), ("dev", 12), ("test", 12)] {
        let file = format!("data/{split}.jsonl");
        let text = fs::read_to_string(a.path().join(&file)).unwrap();
        assert_eq!(text.lines().count(), n);
        assert_eq!(text, fs::read_to_string(b.path().join(&file)).unwrap());
    }
    let meta = json(a.path().join("meta.json"));
    assert_eq!(meta["offset_sigma"], 1.5);
    let seeds: Vec<_> = meta["splits"].as_array().unwrap().iter().map(|s| s["generator"]["seed"].clone()).collect();
    assert_eq!(seeds, vec![9, 10, 11]);
}

#[test]
fn stats_reports_nesting() {
    let dir = setup(&SMALL.replace("[data]", "[data]\nnesting_rate = 1.0"));
    let (code, err) = nestner(dir.path(), &["stats", "--data", "data/train.jsonl", "--csv", "h.csv", "--out", "s.json"]);
    assert_eq!(code, 0, "{err}");
    let s = json(dir.path().join("s.json"));
    assert!(s["nested_pairs"].as_u64().unwrap() > 0);
    assert!(fs::read_to_string(dir.path().join("h.csv")).unwrap().starts_with("distance,head_count,tail_count"));

    fs::write(dir.path().join("flat.jsonl"), "{\"tokens\":[\"a\"],\"entities\":[]}\n").unwrap();
    let (code, err) = nestner(dir.path(), &["stats", "--data", "flat.jsonl", "--types", "X,Y", "--csv", "f.csv", "--out", "f.json"]);
    assert_eq!(code, 0);
    assert!(err.contains("no nested entity pairs"));
    assert_eq!(fs::read_to_string(dir.path().join("f.csv")).unwrap(), "");
    assert_eq!(json(dir.path().join("f.json"))["pooled"], Value::Null);
}

#[test]
fn train_eval_decode() {
    let dir = setup(SMALL);
    let p = dir.path();
    let (code, err) = nestner(p, &["train", "--config", "c.toml", "--out", "t.json"]);
    assert_eq!(code, 0, "{err}");
    let log = fs::read_to_string(p.join("run/train_log.jsonl")).unwrap();
    assert!(log.contains("\"phase\":\"sup\"") && log.contains("\"phase\":\"rl\""));

    let (code, _) = nestner(p, &["eval", "--checkpoint", "run/checkpoint.json", "--data", "data/test.jsonl", "--out", "e1.json"]);
    assert_eq!(code, 0);
    nestner(p, &["eval", "--checkpoint", "run/checkpoint.json", "--data", "data/test.jsonl", "--out", "e2.json"]);
    let e = json(p.join("e1.json"));
    assert_eq!(e, json(p.join("e2.json")));
    for k in ["precision", "recall", "f1", "boundary_f1", "malformed_rate"] {
        assert!(e[k].is_number(), "{k}");
    }
    assert!(e["boundary_f1"].as_f64() >= e["f1"].as_f64());

    let (code, _) = nestner(p, &["decode", "--checkpoint", "run/checkpoint.json", "--data", "data/test.jsonl", "--out", "d.json"]);
    assert_eq!(code, 0);
    assert_eq!(json(p.join("d.json")).as_array().unwrap().len(), 12);

    let (code, err) = nestner(p, &["train", "--config", "c.toml", "--ablate", "eorl", "--out", "t2.json"]);
    assert_eq!(code, 0, "{err}");
    let log = fs::read_to_string(p.join("run/train_log.jsonl")).unwrap();
    assert!(!log.contains("\"phase\":\"rl\""));
    assert_eq!(json(p.join("t2.json"))["variant"], "no-eorl");
}

#[test]
fn exit_codes() {
    let dir = setup(SMALL);
    let p = dir.path();
    let (code, _) = nestner(p, &["eval", "--checkpoint", "missing.json", "--data", "data/test.jsonl", "--out", "e.json"]);
    assert_eq!(code, 2);
    fs::write(p.join("bad.toml"), "[train]\nepoch = 2\n").unwrap();
    let (code, err) = nestner(p, &["train", "--config", "bad.toml", "--out", "t.json"]);
    assert_eq!(code, 1, "{err}");
    fs::write(p.join("bad.jsonl"), "{\"tokens\":[\"a\"],\"entities\":[{\"start\":0,\"end\":3,\"type\":\"T0\"}]}\n").unwrap();
    let (code, _) = nestner(p, &["stats", "--data", "bad.jsonl", "--csv", "x.csv", "--out", "x.json"]);
    assert_eq!(code, 1);

    nestner(p, &["train", "--config", "c.toml", "--ablate", "eorl", "--out", "t.json"]);
    fs::write(p.join("d16.toml"), "[model]\nd = 16\n").unwrap();
    let (code, _) = nestner(
        p,
        &["eval", "--checkpoint", "run/checkpoint.json", "--data", "data/test.jsonl", "--config", "d16.toml", "--out", "e.json"],
    );
    assert_eq!(code, 1);
}

#[test]
fn ablate_reports_every_variant_and_seed() {
    let dir = setup(SMALL);
    let (code, err) = nestner(dir.path(), &["ablate", "--config", "c.toml", "--out", "a.json"]);
    assert_eq!(code, 0, "{err}");
    let rows = json(dir.path().join("a.json"))["rows"].as_array().unwrap().clone();
    let names: Vec<_> = rows.iter().map(|r| r["variant"].as_str().unwrap().to_string()).collect();
    assert_eq!(names, ["full", "-gpa", "-eorl"]);
    for r in rows {
        assert_eq!(r["f1"].as_array().unwrap().len(), 2);
        assert_eq!(r["seeds"], serde_json::json!([0, 1]));
    }
}
