use nestner::harness::{cmd_eval, cmd_gen_data, cmd_train, run_pipeline, PreparedData, RunConfig, Variant};

fn small(dir: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.train = 30;
    cfg.data.dev = 10;
    cfg.data.test = 10;
    cfg.data.max_len = 14;
    cfg.model.d = 8;
    cfg.train.epochs = 2;
    cfg.train.rl_epochs = 1;
    cfg.paths.train = dir.join("train.jsonl");
    cfg.paths.dev = dir.join("dev.jsonl");
    cfg.paths.test = dir.join("test.jsonl");
    cfg.paths.checkpoint = dir.join("ck.json");
    cfg.paths.log = dir.join("log.jsonl");
    cfg
}

#[test]
fn no_eorl_returns_the_supervised_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    cmd_gen_data(&cfg).unwrap();
    let data = PreparedData::load(&cfg).unwrap();
    let run = run_pipeline(&cfg, &data, Variant::NoEorl, 1).unwrap();
    assert_eq!(run.dev, run.supervised_dev);
    assert!(run.log.iter().all(|e| e.phase == "sup"));
    assert_eq!(run.log.len(), cfg.train.epochs);
}

#[test]
fn pipeline_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    cmd_gen_data(&cfg).unwrap();
    let data = PreparedData::load(&cfg).unwrap();
    let a = run_pipeline(&cfg, &data, Variant::Full, 4).unwrap();
    let b = run_pipeline(&cfg, &data, Variant::Full, 4).unwrap();
    assert_eq!(a.params.weights, b.params.weights);
    assert_eq!(a.log, b.log);
    assert!(a.log.iter().any(|e| e.phase == "rl"));
}

#[test]
fn no_gpa_variant_disables_the_prior() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    cmd_gen_data(&cfg).unwrap();
    let data = PreparedData::load(&cfg).unwrap();
    let run = run_pipeline(&cfg, &data, Variant::NoGpa, 0).unwrap();
    assert!(!run.gpa.enabled);
    assert!(cfg.gpa.enabled);
}

#[test]
fn saved_checkpoint_reproduces_dev_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    cmd_gen_data(&cfg).unwrap();
    let report = cmd_train(&cfg, Variant::Full).unwrap();
    let again = cmd_eval(&cfg.paths.checkpoint, &cfg.paths.dev, Some(&cfg)).unwrap();
    assert_eq!(report.dev, again);
}
