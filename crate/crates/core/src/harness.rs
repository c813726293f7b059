//! Run configuration and the operations behind each CLI subcommand.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{
    boundary_histogram, fit_gaussian, load_jsonl, parse_jsonl, synth_corpus, write_jsonl, Dataset, GaussianFit,
    SynthConfig, TokenVocab, TypeVocabulary,
};
use crate::eorl::{
    eval_options, evaluate, max_triplets_for, predict, prepare, train_rl, train_supervised, EvalMetrics, Example,
    LogEntry, TrainConfig,
};
use crate::gpa::GpaConfig;
use crate::nn::optim::AdamWState;
use crate::nn::{ModelConfig, Parameters};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub vocab_size: usize,
    pub num_types: usize,
    pub max_len: usize,
    pub nesting_rate: f64,
    pub offset_sigma: f64,
    pub fixed_offset: Option<usize>,
    /// Type names in id order. When absent they come from the dataset's
    /// `meta.json` sidecar, then from the sorted names found in the file.
    pub types: Option<Vec<String>>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            train: 500,
            dev: 100,
            test: 100,
            vocab_size: s.vocab_size,
            num_types: s.num_types,
            max_len: s.max_len,
            nesting_rate: s.nesting_rate,
            offset_sigma: s.offset_sigma,
            fixed_offset: None,
            types: None,
        }
    }
}

impl DataConfig {
    pub fn synth(&self, num_sentences: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            num_sentences,
            vocab_size: self.vocab_size,
            num_types: self.num_types,
            max_len: self.max_len,
            nesting_rate: self.nesting_rate,
            offset_sigma: self.offset_sigma,
            seed,
            fixed_offset: self.fixed_offset,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d: usize,
    /// Defaults to `2·d`.
    pub ff_dim: Option<usize>,
    /// Defaults to the larger of `data.max_len` and the longest train
    /// sentence.
    pub max_len: Option<usize>,
    pub max_target_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            d: 32,
            ff_dim: None,
            max_len: None,
            max_target_len: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathConfig {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            train: "data/train.jsonl".into(),
            dev: "data/dev.jsonl".into(),
            test: "data/test.jsonl".into(),
            checkpoint: "run/checkpoint.json".into(),
            log: "run/train_log.jsonl".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub seeds: Vec<u64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
        }
    }
}

/// Everything a run needs, loaded from TOML. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelSection,
    pub gpa: GpaConfig,
    pub train: TrainConfig,
    pub paths: PathConfig,
    pub ablate: AblateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            model: ModelSection::default(),
            gpa: GpaConfig::default(),
            train: TrainConfig::desk(),
            paths: PathConfig::default(),
            ablate: AblateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synth(1, 0).validate()?;
        self.gpa.validate()?;
        self.train.validate()?;
        if let Some(t) = &self.data.types {
            if t.len() != self.data.num_types {
                return Err(Error::Validation(format!(
                    "data.types lists {} names but num_types is {}",
                    t.len(),
                    self.data.num_types
                )));
            }
        }
        if self.ablate.seeds.is_empty() {
            return Err(Error::Validation("ablate.seeds must not be empty".into()));
        }
        ModelConfig::new(self.data.num_types + 1, self.data.num_types, self.model.d, 1, 0).validate()
    }

    pub fn model_config(&self, vocab: &TokenVocab, types: &TypeVocabulary, train: &Dataset, seed: u64) -> ModelConfig {
        let k = types.len();
        let mut m = ModelConfig::new(vocab.len() + k, k, self.model.d, 0, seed);
        m.ff_dim = self.model.ff_dim.unwrap_or(2 * self.model.d);
        m.max_len = self.model.max_len.unwrap_or_else(|| self.data.max_len.max(train.max_len()));
        m.max_target_len = self.model.max_target_len;
        m
    }
}

/// Generator parameters written next to the generated splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataMeta {
    pub types: Vec<String>,
    pub offset_sigma: f64,
    pub nesting_rate: f64,
    pub splits: Vec<SplitMeta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub name: String,
    pub path: PathBuf,
    pub generator: SynthConfig,
}

pub const META_FILE: &str = "meta.json";

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<S: Serialize>(path: impl AsRef<Path>, value: &S) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes train/dev/test splits from seeds `3·seed`, `3·seed + 1` and
/// `3·seed + 2`, plus a `meta.json` sidecar beside the train file.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<DataMeta> {
    let types = TypeVocabulary::numbered(cfg.data.num_types)?;
    let splits = [
        ("train", &cfg.paths.train, cfg.data.train),
        ("dev", &cfg.paths.dev, cfg.data.dev),
        ("test", &cfg.paths.test, cfg.data.test),
    ];
    let mut meta = DataMeta {
        types: types.names().to_vec(),
        offset_sigma: cfg.data.offset_sigma,
        nesting_rate: cfg.data.nesting_rate,
        splits: Vec::new(),
    };
    for (k, (name, path, count)) in splits.into_iter().enumerate() {
        let generator = cfg.data.synth(count, cfg.seed.wrapping_mul(3).wrapping_add(k as u64));
        let ds = synth_corpus(&generator)?;
        ensure_parent(path)?;
        write_jsonl(path, &ds)?;
        log::info!("wrote {} sentences to {}", ds.len(), path.display());
        meta.splits.push(SplitMeta {
            name: name.into(),
            path: path.clone(),
            generator,
        });
    }
    let dir = cfg.paths.train.parent().unwrap_or(Path::new(""));
    write_json(dir.join(META_FILE), &meta)?;
    Ok(meta)
}

/// Type names for a dataset file: the explicit list, the sidecar, or the
/// sorted names present in the file.
pub fn resolve_types(path: &Path, explicit: Option<&[String]>) -> Result<TypeVocabulary> {
    if let Some(names) = explicit {
        return TypeVocabulary::new(names.iter().cloned());
    }
    let meta = path.parent().unwrap_or(Path::new("")).join(META_FILE);
    if meta.exists() {
        let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
        let m: DataMeta = serde_json::from_str(&text)?;
        return TypeVocabulary::new(m.types);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut names = BTreeSet::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line)?;
        if let Some(ents) = v.get("entities").and_then(|e| e.as_array()) {
            for e in ents {
                if let Some(t) = e.get("type").and_then(|t| t.as_str()) {
                    names.insert(t.to_string());
                }
            }
        }
    }
    if names.is_empty() {
        names.insert("ENT".to_string());
    }
    TypeVocabulary::new(names)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub sentences: usize,
    pub nested_pairs: usize,
    pub head: Option<GaussianFit>,
    pub tail: Option<GaussianFit>,
    pub pooled: Option<GaussianFit>,
}

/// Boundary-distance histogram as CSV plus Gaussian fits. With no nested
/// pairs the CSV is empty and the fits are skipped.
pub fn cmd_stats(dataset: &Dataset) -> Result<(String, StatsReport)> {
    let hist = boundary_histogram(dataset);
    let fit = |h| fit_gaussian(h).ok();
    let report = StatsReport {
        sentences: dataset.len(),
        nested_pairs: hist.pair_count(),
        head: fit(&hist.head),
        tail: fit(&hist.tail),
        pooled: fit(&hist.pooled()),
    };
    if hist.is_empty() {
        log::warn!("no nested entity pairs; histogram empty and fit skipped");
        return Ok((String::new(), report));
    }
    Ok((hist.to_csv(), report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoGpa,
    NoEorl,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoGpa, Variant::NoEorl];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGpa => "-gpa",
            Variant::NoEorl => "-eorl",
        }
    }
}

/// Train and dev splits in network form, with the vocabularies they share.
pub struct PreparedData {
    pub train_set: Dataset,
    pub types: TypeVocabulary,
    pub vocab: TokenVocab,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
}

impl PreparedData {
    pub fn new(train_set: Dataset, dev_set: &Dataset) -> Result<Self> {
        if train_set.type_vocab != dev_set.type_vocab {
            return Err(Error::Validation("train and dev use different type vocabularies".into()));
        }
        let vocab = TokenVocab::build(&train_set.sentences);
        let train = prepare(&train_set, &vocab);
        let dev = prepare(dev_set, &vocab);
        Ok(Self {
            types: train_set.type_vocab.clone(),
            train_set,
            vocab,
            train,
            dev,
        })
    }

    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let types = resolve_types(&cfg.paths.train, cfg.data.types.as_deref())?;
        let train = load_jsonl(&cfg.paths.train, &types)?;
        let dev = load_jsonl(&cfg.paths.dev, &types)?;
        Self::new(train, &dev)
    }
}

pub struct PipelineResult {
    pub params: Parameters<f64>,
    pub optimizer: AdamWState<f64>,
    pub gpa: GpaConfig,
    pub max_triplets: usize,
    pub best_supervised_f1: f64,
    /// Dev metrics of the supervised checkpoint.
    pub supervised_dev: EvalMetrics,
    /// Dev metrics of the returned parameters.
    pub dev: EvalMetrics,
    pub log: Vec<LogEntry>,
}

/// Supervised training followed, unless the variant drops it, by the RL
/// phase. `seed` drives initialisation, shuffling and sampling.
pub fn run_pipeline(cfg: &RunConfig, data: &PreparedData, variant: Variant, seed: u64) -> Result<PipelineResult> {
    let gpa = match variant {
        Variant::NoGpa => GpaConfig {
            enabled: false,
            ..cfg.gpa
        },
        _ => cfg.gpa,
    };
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let init = Parameters::init(cfg.model_config(&data.vocab, &data.types, &data.train_set, seed))?;
    let sup = train_supervised(init, &data.train, &data.dev, &train_cfg, &gpa)?;
    let max_triplets = max_triplets_for(&sup.best, &data.train, &train_cfg);
    let opts = eval_options(&gpa, max_triplets);
    let supervised_dev = evaluate(&sup.best, &data.dev, &opts)?;
    let mut log = sup.log;
    let (params, optimizer) = if variant == Variant::NoEorl {
        (sup.best, sup.optimizer)
    } else {
        let rl = train_rl(sup.best, &data.train, &data.dev, &train_cfg, &gpa, sup.best_dev_f1)?;
        log.extend(rl.log);
        (rl.params, rl.optimizer)
    };
    let dev = evaluate(&params, &data.dev, &opts)?;
    Ok(PipelineResult {
        params,
        optimizer,
        gpa,
        max_triplets,
        best_supervised_f1: sup.best_dev_f1,
        supervised_dev,
        dev,
        log,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: Variant,
    pub best_supervised_dev_f1: f64,
    pub dev: EvalMetrics,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Trains per `cfg`, writing the checkpoint and the JSONL log.
pub fn cmd_train(cfg: &RunConfig, variant: Variant) -> Result<TrainReport> {
    let data = PreparedData::load(cfg)?;
    let run = run_pipeline(cfg, &data, variant, cfg.seed)?;
    ensure_parent(&cfg.paths.checkpoint)?;
    Checkpoint::new(&run.params, Some(&run.optimizer), &run.gpa, run.max_triplets, &data.types, &data.vocab)?.save(&cfg.paths.checkpoint)?;
    ensure_parent(&cfg.paths.log)?;
    let mut text = Vec::new();
    for e in &run.log {
        serde_json::to_writer(&mut text, e)?;
        text.write_all(b"\n").expect("in-memory write");
    }
    fs::write(&cfg.paths.log, text).map_err(|e| Error::io(&cfg.paths.log, e))?;
    Ok(TrainReport {
        variant,
        best_supervised_dev_f1: run.best_supervised_f1,
        dev: run.dev,
        checkpoint: cfg.paths.checkpoint.clone(),
        log: cfg.paths.log.clone(),
    })
}

/// A checkpoint together with the dataset it is applied to.
pub struct Loaded {
    pub checkpoint: Checkpoint,
    pub params: Parameters<f64>,
    pub dataset: Dataset,
    pub examples: Vec<Example>,
}

/// Loads both files; when `expected` is given its model section must agree
/// with the checkpoint.
pub fn load_for_inference(checkpoint: &Path, dataset: &Path, expected: Option<&RunConfig>) -> Result<Loaded> {
    let ck = Checkpoint::load(checkpoint)?;
    let params: Parameters<f64> = ck.params()?;
    if let Some(cfg) = expected {
        let m = &params.config;
        let ff = cfg.model.ff_dim.unwrap_or(2 * cfg.model.d);
        if m.d != cfg.model.d || m.ff_dim != ff || m.max_target_len != cfg.model.max_target_len {
            return Err(Error::Validation(format!(
                "checkpoint dims (d {}, ff {}, target {}) differ from config (d {}, ff {ff}, target {})",
                m.d, m.ff_dim, m.max_target_len, cfg.model.d, cfg.model.max_target_len
            )));
        }
    }
    let text = fs::read_to_string(dataset).map_err(|e| Error::io(dataset, e))?;
    let ds = parse_jsonl(&text, &ck.types)?;
    let examples = prepare(&ds, &ck.token_vocab());
    Ok(Loaded {
        checkpoint: ck,
        params,
        dataset: ds,
        examples,
    })
}

/// Greedy grammar-mode decoding scored against the dataset's gold spans.
pub fn cmd_eval(checkpoint: &Path, dataset: &Path, expected: Option<&RunConfig>) -> Result<EvalMetrics> {
    let l = load_for_inference(checkpoint, dataset, expected)?;
    let opts = eval_options(&l.checkpoint.gpa, l.checkpoint.max_triplets);
    evaluate(&l.params, &l.examples, &opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedEntity {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub type_name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedSentence {
    pub tokens: Vec<String>,
    pub entities: Vec<DecodedEntity>,
    pub malformed: usize,
}

pub fn cmd_decode(checkpoint: &Path, dataset: &Path) -> Result<Vec<DecodedSentence>> {
    let l = load_for_inference(checkpoint, dataset, None)?;
    let opts = eval_options(&l.checkpoint.gpa, l.checkpoint.max_triplets);
    let preds = predict(&l.params, &l.examples, &opts)?;
    Ok(l.dataset
        .sentences
        .iter()
        .zip(preds)
        .map(|(s, (triplets, malformed))| DecodedSentence {
            tokens: s.tokens.clone(),
            entities: triplets
                .iter()
                .map(|t| DecodedEntity {
                    start: t.start,
                    end: t.end,
                    type_name: l.checkpoint.types.name(t.type_id).unwrap_or("?").to_string(),
                })
                .collect(),
            malformed,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: String,
    pub seeds: Vec<u64>,
    pub f1: Vec<f64>,
    pub boundary_f1: Vec<f64>,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_boundary_f1: f64,
    pub std_boundary_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<VariantRow>,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Every variant on every seed, sharing data and per-seed initialisation.
pub fn run_ablation(cfg: &RunConfig, data: &PreparedData) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let mut f1 = Vec::new();
        let mut bf1 = Vec::new();
        for &seed in &cfg.ablate.seeds {
            let run = run_pipeline(cfg, data, variant, seed)?;
            log::info!("{} seed {seed}: dev f1 {:.4}", variant.label(), run.dev.f1);
            f1.push(run.dev.f1);
            bf1.push(run.dev.boundary_f1);
        }
        let (mean_f1, std_f1) = mean_std(&f1);
        let (mean_boundary_f1, std_boundary_f1) = mean_std(&bf1);
        rows.push(VariantRow {
            variant: variant.label().into(),
            seeds: cfg.ablate.seeds.clone(),
            f1,
            boundary_f1: bf1,
            mean_f1,
            std_f1,
            mean_boundary_f1,
            std_boundary_f1,
        });
    }
    Ok(AblationReport { rows })
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationReport> {
    run_ablation(cfg, &PreparedData::load(cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_unknown_keys() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let cfg = RunConfig::from_toml("seed = 4\n[gpa]\nenabled = false\nalpha = 0.7\n[train]\nepochs = 3\n").unwrap();
        assert_eq!((cfg.seed, cfg.gpa.enabled, cfg.train.epochs), (4, false, 3));
        assert!(matches!(RunConfig::from_toml("[train]\nepoch = 3\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[gpa]\nalpha = 1.5\n"), Err(Error::Validation(_))));
        assert!(RunConfig::from_toml("[model]\nd = 7\n").is_err());
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn stats_on_data_without_nesting() {
        let ds = Dataset::new(vec![], TypeVocabulary::numbered(2).unwrap()).unwrap();
        let (csv, r) = cmd_stats(&ds).unwrap();
        assert!(csv.is_empty());
        assert_eq!(r.nested_pairs, 0);
        assert!(r.pooled.is_none());
    }
}
