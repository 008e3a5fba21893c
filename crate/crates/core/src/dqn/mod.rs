//! From-scratch deep Q-learning with separate train, episode and target networks.

mod agent;
pub mod checkpoint;
mod network;
mod replay;

pub use agent::{
    argmax, compute_targets, greedy_action, select_action, train, train_step, BatchRecord, DqnAgent, EnvStep,
    Environment, EpisodeRecord, TrainOutput, TrainerConfig, TrainingLog, TRAINING_LOG_HEADER,
};
pub use network::{Dense, Gradients, QNetwork, RmsProp, DEFAULT_LAYER_SIZES};
pub use replay::{ReplayMemory, Transition};
