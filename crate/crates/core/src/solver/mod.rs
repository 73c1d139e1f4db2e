//! TD3 solver that produces the per-task near-optimal actor and twin critics.

mod config;
mod replay;
mod td3;

pub use config::{LinearSchedule, Profile, Td3Config};
pub use replay::{Batch, ReplayBuffer};
pub use td3::{
    qstar_label, soft_update, td3_targets, td3_train, td3_update, Actor, CriticPair, CurvePoint,
    Losses, QLabelRule, Td3Nets, Td3Solution,
};

use thiserror::Error;

use crate::container::ContainerError;
use crate::envfam::EnvError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("critic diverged at update {step}: loss {loss}")]
    Diverged { step: u64, loss: f64 },
    #[error("non-finite {what} loss at update {step}")]
    NonFiniteLoss { what: &'static str, step: u64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
}
