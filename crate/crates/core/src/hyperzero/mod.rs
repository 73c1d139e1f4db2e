//! Hypernetwork that maps a task context to the weights of a policy and critic.

mod config;
pub mod loss;
mod net;
mod train;

pub use config::{ContextNorm, HzConfig, Variant};
pub use loss::{
    loss_and_grad, loss_values, next_actions, record_loss, td_gradient, BatchTensors, GraphAgent,
    LossTerms, LossValues,
};
pub use net::{main_specs, GeneratedBanks, GeneratedWeights, HyperNet, Role, Trunk, WeightBundle};
pub use train::{
    checkpoint_kind, fit, hz_loss, hz_train, FitCurvePoint, FitOutcome, HzTrained, Trainable,
};

use thiserror::Error;

use crate::container::ContainerError;
use crate::datastore::DataError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum HzError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("context (psi={psi}, mu={mu}) is outside twice the declared range")]
    ContextOutOfRange { psi: f64, mu: f64 },
    #[error("this agent generates no critic")]
    NoCritic,
    #[error("non-finite loss at update {step}")]
    NonFinite { step: u64 },
    #[error("dataset has no training transitions")]
    EmptyTrainSet,
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Container(#[from] ContainerError),
}
