//! Free-order reinforcement learning over sampled triplet sequences, and
//! the supervised phase that precedes it.

mod loss;
mod reward;
mod train;

pub use loss::{reward_weighted_mean, rl_loss};
pub use reward::{assign_rewards, classify_triplet, RewardTrace, WindowClass};
pub use train::{
    check_gate, eval_options, evaluate, max_triplets_for, predict, prepare, train_rl, train_supervised, EvalMetrics,
    Example, LogEntry, RlOutcome, SupervisedOutcome, TrainConfig,
};
