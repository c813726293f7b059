//! Supervised pre-training and the REINFORCE fine-tuning phase.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::rl_loss;
use super::reward::assign_rewards;
use crate::corpus::{
    boundary_f1, decode_output, encode_target, span_f1, Dataset, EntityTriplet, OutputLayout, TokenVocab,
};
use crate::etg::{greedy_decode, sample_decode, step_losses, DecodeOptions, SlotGrammar};
use crate::gpa::GpaConfig;
use crate::nn::model::bind;
use crate::nn::optim::{adamw_step, collect_gradients, AdamWConfig, AdamWState};
use crate::nn::{Parameters, Tape, Weights};
use crate::nn::Matrix;
use crate::scalar::Scalar;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub supervised_lr: f64,
    pub rl_lr: f64,
    pub pretrain_target_fraction: f64,
    /// Supervised epochs.
    pub epochs: usize,
    pub rl_epochs: usize,
    pub batch_size: usize,
    /// Episode bound; defaults to the largest gold count in train plus 2.
    pub max_triplets: Option<usize>,
    pub seed: u64,
    pub dup_reward_override: bool,
    pub weight_decay: f64,
    /// Slot grammar while sampling episodes.
    pub rl_grammar: SlotGrammar,
    pub adam: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            supervised_lr: 5e-5,
            rl_lr: 5e-6,
            pretrain_target_fraction: 0.9,
            epochs: 30,
            rl_epochs: 5,
            batch_size: 8,
            max_triplets: None,
            seed: 0,
            dup_reward_override: false,
            weight_decay: 0.01,
            rl_grammar: SlotGrammar::Off,
            adam: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Supervised learning rate sized for small models trained from random
    /// initialisation. The RL phase keeps its default.
    pub fn desk() -> Self {
        Self {
            supervised_lr: 3e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Validation(m.into()));
        if !(self.pretrain_target_fraction > 0.0 && self.pretrain_target_fraction <= 1.0) {
            return fail("pretrain_target_fraction must be in (0, 1]");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.supervised_lr >= 0.0 && self.rl_lr >= 0.0 && self.weight_decay >= 0.0) {
            return fail("learning rates and weight_decay must be non-negative");
        }
        if self.max_triplets == Some(0) {
            return fail("max_triplets must be at least 1");
        }
        Ok(())
    }
}

/// A sentence ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub token_ids: Vec<usize>,
    pub gold: Vec<EntityTriplet>,
    /// Gold-order target indices ending in EOS.
    pub targets: Vec<usize>,
}

pub fn prepare(dataset: &Dataset, vocab: &TokenVocab) -> Vec<Example> {
    dataset
        .sentences
        .iter()
        .map(|s| Example {
            token_ids: vocab.encode(s),
            gold: s.entities.clone(),
            targets: encode_target(s, &dataset.type_vocab).indices,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub boundary_f1: f64,
    /// Malformed windows over all decoded windows.
    pub malformed_rate: f64,
}

/// Greedy predictions for every example.
pub fn predict<T: Scalar>(
    params: &Parameters<T>,
    examples: &[Example],
    opts: &DecodeOptions,
) -> Result<Vec<(Vec<EntityTriplet>, usize)>> {
    let vocab = crate::corpus::TypeVocabulary::numbered(params.config.num_types)?;
    examples
        .iter()
        .map(|ex| {
            let out = greedy_decode(params, &ex.token_ids, opts)?;
            let d = decode_output(&out, &vocab, ex.token_ids.len())?;
            Ok((d.triplets, d.malformed))
        })
        .collect()
}

pub fn evaluate<T: Scalar>(params: &Parameters<T>, examples: &[Example], opts: &DecodeOptions) -> Result<EvalMetrics> {
    let preds = predict(params, examples, opts)?;
    let gold: Vec<_> = examples.iter().map(|e| e.gold.clone()).collect();
    let malformed: usize = preds.iter().map(|p| p.1).sum();
    let windows: usize = preds.iter().map(|p| p.0.len() + p.1).sum();
    let pred: Vec<_> = preds.into_iter().map(|p| p.0).collect();
    let span = span_f1(&pred, &gold);
    Ok(EvalMetrics {
        precision: span.precision,
        recall: span.recall,
        f1: span.f1,
        boundary_f1: boundary_f1(&pred, &gold).f1,
        malformed_rate: if windows == 0 { 0.0 } else { malformed as f64 / windows as f64 },
    })
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub phase: String,
    pub epoch: usize,
    pub loss: f64,
    pub dev_p: f64,
    pub dev_r: f64,
    pub dev_f1: f64,
    pub mean_reward: Option<f64>,
}

/// Episode bound for a training set under `cfg`, clipped to what the
/// decoder can hold.
pub fn max_triplets_for<T: Scalar>(params: &Parameters<T>, train: &[Example], cfg: &TrainConfig) -> usize {
    let wanted = cfg
        .max_triplets
        .unwrap_or_else(|| train.iter().map(|e| e.gold.len()).max().unwrap_or(0) + 2);
    wanted.clamp(1, params.config.max_decodable_triplets())
}

/// Decoding used for evaluation: greedy, grammar on.
pub fn eval_options(gpa: &GpaConfig, max_triplets: usize) -> DecodeOptions {
    DecodeOptions {
        grammar: SlotGrammar::Grammar,
        gpa: *gpa,
        max_triplets,
    }
}

pub struct SupervisedOutcome<T> {
    /// Parameters at the epoch with the highest dev F1.
    pub best: Parameters<T>,
    pub optimizer: AdamWState<T>,
    pub best_dev_f1: f64,
    pub best_epoch: usize,
    pub log: Vec<LogEntry>,
}

fn accumulate<T: Scalar>(acc: &mut Option<Weights<Matrix<T>>>, g: Weights<Matrix<T>>) {
    match acc {
        Some(a) => a.add_assign(&g),
        None => *acc = Some(g),
    }
}

fn require_data(train: &[Example], dev: &[Example]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    if dev.is_empty() {
        return Err(Error::Validation("dev set is empty".into()));
    }
    Ok(())
}

/// Teacher-forced cross-entropy training on gold-order targets. Epoch 0 in
/// the returned state means the initial parameters were never beaten.
pub fn train_supervised<T: Scalar>(
    init: Parameters<T>,
    train: &[Example],
    dev: &[Example],
    cfg: &TrainConfig,
    gpa: &GpaConfig,
) -> Result<SupervisedOutcome<T>> {
    cfg.validate()?;
    gpa.validate()?;
    require_data(train, dev)?;
    let opts = eval_options(gpa, max_triplets_for(&init, train, cfg));
    let mut params = init;
    let mut state = AdamWState::new(&params.weights);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let start = evaluate(&params, dev, &opts)?;
    let mut outcome = SupervisedOutcome {
        best: params.clone(),
        optimizer: state.clone(),
        best_dev_f1: start.f1,
        best_epoch: 0,
        log: Vec::new(),
    };

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut grads = None;
            for &i in batch {
                let ex = &train[i];
                let mut tape = Tape::new();
                let w = bind(&mut tape, &params);
                let ce = step_losses(&mut tape, &w, &params, &ex.token_ids, &ex.targets, SlotGrammar::Off, gpa)?;
                let inv = scale / ce.len() as f64;
                let terms: Vec<_> = ce.into_iter().map(|v| (v, T::of(inv))).collect();
                let loss = tape.weighted_sum(&terms);
                total += tape.value(loss).item().as_f64() / scale;
                accumulate(&mut grads, collect_gradients(&tape.backward(loss), &w, &params.weights));
            }
            let grads = grads.expect("non-empty batch");
            adamw_step(&mut params.weights, &grads, &mut state, cfg.supervised_lr, cfg.weight_decay, &cfg.adam)?;
        }
        if !params.weights.is_finite() {
            return Err(Error::Validation(format!("parameters diverged in supervised epoch {epoch}")));
        }
        let m = evaluate(&params, dev, &opts)?;
        let entry = LogEntry {
            phase: "sup".into(),
            epoch,
            loss: total / train.len() as f64,
            dev_p: m.precision,
            dev_r: m.recall,
            dev_f1: m.f1,
            mean_reward: None,
        };
        log::info!("sup epoch {epoch}: loss {:.4} dev f1 {:.4}", entry.loss, m.f1);
        outcome.log.push(entry);
        if m.f1 > outcome.best_dev_f1 {
            outcome.best = params.clone();
            outcome.optimizer = state.clone();
            outcome.best_dev_f1 = m.f1;
            outcome.best_epoch = epoch;
        }
    }
    Ok(outcome)
}

pub struct RlOutcome<T> {
    pub params: Parameters<T>,
    pub optimizer: AdamWState<T>,
    pub start_dev_f1: f64,
    pub log: Vec<LogEntry>,
}

/// Fails unless `dev_f1` reaches the configured fraction of the best
/// supervised dev F1.
pub fn check_gate(dev_f1: f64, best_supervised_f1: f64, cfg: &TrainConfig) -> Result<()> {
    let need = cfg.pretrain_target_fraction * best_supervised_f1;
    if dev_f1 < need {
        return Err(Error::Schedule(format!(
            "dev F1 {dev_f1:.4} is below {:.0}% of the best supervised dev F1 {best_supervised_f1:.4}; \
             pre-train longer before the RL phase",
            cfg.pretrain_target_fraction * 100.0
        )));
    }
    Ok(())
}

/// REINFORCE on freely ordered sampled episodes, one per sentence per
/// epoch, starting from a supervised checkpoint. Returns the final
/// parameters.
pub fn train_rl<T: Scalar>(
    init: Parameters<T>,
    train: &[Example],
    dev: &[Example],
    cfg: &TrainConfig,
    gpa: &GpaConfig,
    best_supervised_f1: f64,
) -> Result<RlOutcome<T>> {
    cfg.validate()?;
    gpa.validate()?;
    require_data(train, dev)?;
    let max_triplets = max_triplets_for(&init, train, cfg);
    let eval_opts = eval_options(gpa, max_triplets);
    let sample_opts = DecodeOptions {
        grammar: cfg.rl_grammar,
        gpa: *gpa,
        max_triplets,
    };
    let mut params = init;
    let start = evaluate(&params, dev, &eval_opts)?;
    check_gate(start.f1, best_supervised_f1, cfg)?;

    let mut state = AdamWState::new(&params.weights);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    for epoch in 1..=cfg.rl_epochs {
        order.shuffle(&mut rng);
        let (mut total, mut reward_sum) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut grads = None;
            for &i in batch {
                let ex = &train[i];
                let episode = sample_decode(&params, &ex.token_ids, &sample_opts, &mut rng)?;
                let layout = OutputLayout::new(params.config.num_types, ex.token_ids.len());
                let rewards = assign_rewards(&episode.indices, &ex.gold, layout, cfg.dup_reward_override);
                reward_sum += rewards.mean();
                let mut tape = Tape::new();
                let w = bind(&mut tape, &params);
                let loss = rl_loss(
                    &mut tape,
                    &w,
                    &params,
                    &ex.token_ids,
                    &episode.indices,
                    &rewards.rewards,
                    cfg.rl_grammar,
                    gpa,
                    scale,
                )?;
                total += tape.value(loss).item().as_f64() / scale;
                accumulate(&mut grads, collect_gradients(&tape.backward(loss), &w, &params.weights));
            }
            let grads = grads.expect("non-empty batch");
            adamw_step(&mut params.weights, &grads, &mut state, cfg.rl_lr, cfg.weight_decay, &cfg.adam)?;
        }
        if !params.weights.is_finite() {
            return Err(Error::Validation(format!("parameters diverged in RL epoch {epoch}")));
        }
        let m = evaluate(&params, dev, &eval_opts)?;
        let n = train.len() as f64;
        let entry = LogEntry {
            phase: "rl".into(),
            epoch,
            loss: total / n,
            dev_p: m.precision,
            dev_r: m.recall,
            dev_f1: m.f1,
            mean_reward: Some(reward_sum / n),
        };
        log::info!(
            "rl epoch {epoch}: loss {:.4} reward {:.4} dev f1 {:.4}",
            entry.loss,
            reward_sum / n,
            m.f1
        );
        log.push(entry);
    }
    Ok(RlOutcome {
        params,
        optimizer: state,
        start_dev_f1: start.f1,
        log,
    })
}
