use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::baselines::{maml_adapt, CtxTrained};
use crate::datastore::{Dataset, Transition};
use crate::envfam::{FamilySpec, Policy, TaskParams};
use crate::hyperzero::{HzTrained, Variant};
use crate::seeds::{derive_seed, Stage};
use crate::solver::Td3Solution;

/// Episodes per task at test time, matching the collection convention.
pub const DEFAULT_EVAL_EPISODES: usize = 10;

/// Every agent the pipeline can train and evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentKind {
    #[serde(rename = "hyperzero")]
    HyperZero,
    #[serde(rename = "hyperzero-pi")]
    HyperZeroPi,
    #[serde(rename = "hyperzero-pi_q")]
    HyperZeroPiQ,
    #[serde(rename = "ctx")]
    Ctx,
    #[serde(rename = "ctx-uvfa")]
    CtxUvfa,
    #[serde(rename = "maml-zero-shot")]
    MamlZeroShot,
    #[serde(rename = "maml-few-shot")]
    MamlFewShot,
}

impl AgentKind {
    pub const ALL: [AgentKind; 7] = [
        AgentKind::HyperZero,
        AgentKind::HyperZeroPi,
        AgentKind::HyperZeroPiQ,
        AgentKind::Ctx,
        AgentKind::CtxUvfa,
        AgentKind::MamlZeroShot,
        AgentKind::MamlFewShot,
    ];

    /// Agents trained by `all` unless a list is given.
    pub const DEFAULT: [AgentKind; 3] = [AgentKind::HyperZero, AgentKind::Ctx, AgentKind::CtxUvfa];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::HyperZero => "hyperzero",
            AgentKind::HyperZeroPi => "hyperzero-pi",
            AgentKind::HyperZeroPiQ => "hyperzero-pi_q",
            AgentKind::Ctx => "ctx",
            AgentKind::CtxUvfa => "ctx-uvfa",
            AgentKind::MamlZeroShot => "maml-zero-shot",
            AgentKind::MamlFewShot => "maml-few-shot",
        }
    }

    /// The hypernetwork variant this agent trains, if it is one.
    pub fn variant(self) -> Option<Variant> {
        match self {
            AgentKind::HyperZero => Some(Variant::PiQTd),
            AgentKind::HyperZeroPi => Some(Variant::Pi),
            AgentKind::HyperZeroPiQ => Some(Variant::PiQ),
            _ => None,
        }
    }

    pub fn from_variant(v: Variant) -> Self {
        match v {
            Variant::PiQTd => AgentKind::HyperZero,
            Variant::Pi => AgentKind::HyperZeroPi,
            Variant::PiQ => AgentKind::HyperZeroPiQ,
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown agent `{s}`"))
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Something that yields a policy for a context without further training
/// (few-shot MAML adapts on stored near-optimal transitions only).
pub enum Agent<'a> {
    Hyper(&'a HzTrained),
    Ctx(&'a CtxTrained),
    MamlFewShot {
        trained: &'a CtxTrained,
        support: &'a Dataset,
        seed: u64,
    },
    Specialists(&'a [Td3Solution]),
}

impl Agent<'_> {
    pub fn policy(&self, task: TaskParams) -> Result<Box<dyn Policy>, EvalError> {
        match self {
            Agent::Hyper(t) => Ok(Box::new(t.net.weights_for(task.psi, task.mu)?.policy)),
            Agent::Ctx(t) => Ok(Box::new(t.agent.policy_for(task.psi, task.mu)?)),
            Agent::MamlFewShot {
                trained,
                support,
                seed,
            } => {
                let config = trained.maml.unwrap_or_default();
                let rows = support
                    .task_transitions(task)
                    .filter(|r| !r.is_empty())
                    .ok_or(EvalError::NoSupport(task))?;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let shots: Vec<&Transition> = (0..config.k_shot)
                    .map(|_| &rows[rng.random_range(0..rows.len())])
                    .collect();
                let adapted = maml_adapt(&trained.agent, &shots, &config, config.adapt_steps)?;
                Ok(Box::new(adapted.policy_for(task.psi, task.mu)?))
            }
            Agent::Specialists(solutions) => {
                let s = solutions
                    .iter()
                    .find(|s| s.task == task)
                    .ok_or(EvalError::NoSpecialist(task))?;
                Ok(Box::new(s.actor.clone()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReturn {
    pub task: TaskParams,
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

/// Seed of evaluation episode `k`; shared by every agent and task so all
/// of them start from the same initial states.
pub fn episode_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, Stage::Evaluate, k as u64)
}

/// Deterministic rollouts of each task's first policy execution.
pub fn evaluate(
    agent: &Agent<'_>,
    family: &FamilySpec,
    tasks: &[TaskParams],
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<TaskReturn>, EvalError> {
    tasks
        .iter()
        .map(|&task| {
            let policy = agent.policy(task)?;
            let instance = family.instance(task);
            let returns = (0..n_episodes)
                .map(|k| {
                    Ok(instance
                        .rollout(policy.as_ref(), episode_seed(seed, k))?
                        .total_return)
                })
                .collect::<Result<Vec<f64>, EvalError>>()?;
            let (mean, std) = mean_std(&returns);
            Ok(TaskReturn {
                task,
                mean,
                std,
                returns,
            })
        })
        .collect()
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
