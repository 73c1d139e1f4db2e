//! Parameterized MDP families.
//!
//! Every family shares its state and action spaces across tasks. The reward
//! depends only on the desired speed `psi`; the dynamics depend only on the
//! physical parameter `mu`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown family `{0}` (expected pointmass1d or pendulumspin)")]
    UnknownFamily(String),
    #[error("non-finite {what}: {values:?}")]
    NonFinite {
        what: &'static str,
        values: Vec<f64>,
    },
    #[error("{what} has {got} entries, expected {expected}")]
    Dim {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("invalid family spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamics {
    PointMass1d,
    PendulumSpin,
}

/// Reward as a function of the tracked speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardShape {
    /// `exp(-(speed - psi)^2 / (2 sigma^2))`
    Gaussian { sigma: f64 },
    /// Always 1; used to check value estimates against a geometric series.
    Constant,
}

/// Closed interval sampled on a uniform grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    /// Value used when this axis is held fixed.
    pub default: f64,
}

impl ParamRange {
    pub fn n_points(&self) -> usize {
        ((self.hi - self.lo) / self.step).round() as usize + 1
    }

    /// Grid points, rounded to 1e-9 so that `0.5 + 3·0.05` prints as `0.65`.
    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points())
            .map(|i| ((self.lo + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect()
    }

    /// Affine map of `[lo, hi]` onto `[-1, 1]`.
    pub fn normalize(&self, v: f64) -> f64 {
        2.0 * (v - self.lo) / (self.hi - self.lo) - 1.0
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo - 1e-9 && v <= self.hi + 1e-9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub name: String,
    pub dynamics: Dynamics,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Actions live in `[-action_bound, action_bound]`.
    pub action_bound: f64,
    pub dt: f64,
    pub horizon: usize,
    pub gamma: f64,
    pub psi: ParamRange,
    pub mu: ParamRange,
    pub reward: RewardShape,
}

/// Which task parameters vary across the task grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Reward,
    Dynamics,
    Both,
}

impl std::str::FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reward" => Ok(Axis::Reward),
            "dynamics" => Ok(Axis::Dynamics),
            "both" => Ok(Axis::Both),
            other => Err(format!("unknown axis `{other}`")),
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::Reward => "reward",
            Axis::Dynamics => "dynamics",
            Axis::Both => "both",
        })
    }
}

/// Context identifying one MDP in a family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    /// Desired speed.
    pub psi: f64,
    /// Physical size / mass parameter.
    pub mu: f64,
}

impl TaskParams {
    pub fn new(psi: f64, mu: f64) -> Self {
        Self { psi, mu }
    }

    /// Stable short key, e.g. `psi+2.000000_mu1.000000`.
    pub fn key(&self) -> String {
        format!("psi{:+.6}_mu{:.6}", self.psi, self.mu)
    }
}

impl FamilySpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.horizon == 0 {
            return Err(EnvError::InvalidSpec("horizon must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(EnvError::InvalidSpec(format!(
                "gamma {} outside (0, 1]",
                self.gamma
            )));
        }
        for (name, r) in [("psi", &self.psi), ("mu", &self.mu)] {
            let steps = (r.hi - r.lo) / r.step;
            if r.step <= 0.0 || (steps - steps.round()).abs() > 1e-6 {
                return Err(EnvError::InvalidSpec(format!(
                    "{name} step {} does not divide [{}, {}]",
                    r.step, r.lo, r.hi
                )));
            }
        }
        Ok(())
    }

    /// Stable hash of the serialized spec, used to key caches and datasets.
    pub fn spec_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        format!("{:08x}", crc32fast::hash(json.as_bytes()))
    }

    /// Largest reachable speed magnitude from a rest start, if the family has one.
    pub fn speed_bound(&self) -> Option<f64> {
        match self.dynamics {
            Dynamics::PointMass1d => Some(POINTMASS_FORCE * self.action_bound / POINTMASS_DRAG),
            Dynamics::PendulumSpin => None,
        }
    }

    /// Dimension of what agents observe.
    pub fn obs_dim(&self) -> usize {
        match self.dynamics {
            Dynamics::PointMass1d => 1,
            Dynamics::PendulumSpin => self.state_dim,
        }
    }

    /// Agent observation of a state. The point mass position carries no
    /// reward or dynamics information and grows without bound, so it is
    /// left out.
    pub fn observe(&self, state: &[f64]) -> Vec<f64> {
        match self.dynamics {
            Dynamics::PointMass1d => vec![state[1] * POINTMASS_DRAG / POINTMASS_FORCE],
            Dynamics::PendulumSpin => state.to_vec(),
        }
    }

    pub fn instance(&self, params: TaskParams) -> MdpInstance {
        MdpInstance::new(self.clone(), params)
    }

    /// Reward for a tracked speed under desired speed `psi`.
    pub fn reward(&self, speed: f64, psi: f64) -> f64 {
        match self.reward {
            RewardShape::Gaussian { sigma } => {
                let d = speed - psi;
                (-(d * d) / (2.0 * sigma * sigma)).exp()
            }
            RewardShape::Constant => 1.0,
        }
    }

    /// Task grid in psi-major order.
    ///
    /// A desired speed of zero is dropped unless `include_zero_speed` is set.
    pub fn task_grid(&self, axis: Axis, include_zero_speed: bool) -> Vec<TaskParams> {
        let keep = |p: &f64| include_zero_speed || p.abs() > self.psi.step / 2.0;
        let psis: Vec<f64> = match axis {
            Axis::Dynamics => vec![self.psi.default],
            _ => self.psi.points().into_iter().filter(keep).collect(),
        };
        let mus: Vec<f64> = match axis {
            Axis::Reward => vec![self.mu.default],
            _ => self.mu.points(),
        };
        psis.iter()
            .flat_map(|&psi| mus.iter().map(move |&mu| TaskParams::new(psi, mu)))
            .collect()
    }
}

/// Fixed family specs by name.
pub fn make_family(name: &str) -> Result<FamilySpec, EnvError> {
    match name {
        "pointmass1d" => Ok(FamilySpec {
            name: "pointmass1d".into(),
            dynamics: Dynamics::PointMass1d,
            state_dim: 2,
            action_dim: 1,
            action_bound: 1.0,
            dt: 0.05,
            horizon: 200,
            gamma: 0.99,
            psi: ParamRange {
                lo: -4.0,
                hi: 4.0,
                step: 0.2,
                default: 2.0,
            },
            mu: ParamRange {
                lo: 0.5,
                hi: 2.0,
                step: 0.05,
                default: 1.0,
            },
            reward: RewardShape::Gaussian { sigma: 0.5 },
        }),
        "pendulumspin" => Ok(FamilySpec {
            name: "pendulumspin".into(),
            dynamics: Dynamics::PendulumSpin,
            state_dim: 3,
            action_dim: 1,
            action_bound: 1.0,
            dt: 0.02,
            horizon: 200,
            gamma: 0.99,
            psi: ParamRange {
                lo: -8.0,
                hi: 8.0,
                step: 0.5,
                default: 4.0,
            },
            mu: ParamRange {
                lo: 0.5,
                hi: 1.5,
                step: 0.05,
                default: 1.0,
            },
            reward: RewardShape::Gaussian { sigma: 1.0 },
        }),
        other => Err(EnvError::UnknownFamily(other.to_string())),
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// The action had to be clipped into bounds.
    pub clipped: bool,
}

/// One MDP of a family, fully determined by `(family, params)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpInstance {
    pub family: FamilySpec,
    pub params: TaskParams,
}

pub const GRAVITY: f64 = 9.81;
const POINTMASS_FORCE: f64 = 5.0;
const POINTMASS_DRAG: f64 = 0.5;
const PENDULUM_TORQUE: f64 = 2.0;
const PENDULUM_DAMPING: f64 = 0.05;

impl MdpInstance {
    pub fn new(family: FamilySpec, params: TaskParams) -> Self {
        Self { family, params }
    }

    pub fn state_dim(&self) -> usize {
        self.family.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.family.action_dim
    }

    /// Seeded initial state.
    pub fn reset(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self.family.dynamics {
            Dynamics::PointMass1d => vec![0.0, rng.random_range(-0.1..=0.1)],
            Dynamics::PendulumSpin => {
                let theta: f64 = rng.random_range(-PI..=PI);
                let omega = rng.random_range(-0.5..=0.5);
                vec![theta.cos(), theta.sin(), omega]
            }
        }
    }

    /// The tracked speed of a state (velocity or angular velocity).
    pub fn speed(&self, state: &[f64]) -> f64 {
        match self.family.dynamics {
            Dynamics::PointMass1d => state[1],
            Dynamics::PendulumSpin => state[2],
        }
    }

    /// Semi-implicit Euler step followed by the reward of the new state.
    pub fn step(&self, state: &[f64], action: &[f64]) -> Result<Step, EnvError> {
        if state.len() != self.family.state_dim {
            return Err(EnvError::Dim {
                what: "state",
                got: state.len(),
                expected: self.family.state_dim,
            });
        }
        if action.len() != self.family.action_dim {
            return Err(EnvError::Dim {
                what: "action",
                got: action.len(),
                expected: self.family.action_dim,
            });
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::NonFinite {
                what: "state",
                values: state.to_vec(),
            });
        }
        if action.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::NonFinite {
                what: "action",
                values: action.to_vec(),
            });
        }
        let bound = self.family.action_bound;
        let a = action[0].clamp(-bound, bound);
        let clipped = a != action[0];
        let (mu, dt) = (self.params.mu, self.family.dt);
        let next_state = match self.family.dynamics {
            Dynamics::PointMass1d => {
                let (x, v) = (state[0], state[1]);
                let v2 = v + dt * (POINTMASS_FORCE * a - POINTMASS_DRAG * v) / mu;
                vec![x + dt * v2, v2]
            }
            Dynamics::PendulumSpin => {
                let theta = state[1].atan2(state[0]);
                let omega = state[2];
                let accel = (PENDULUM_TORQUE * a - PENDULUM_DAMPING * omega) / (mu * mu)
                    - (GRAVITY / mu) * theta.sin();
                let omega2 = omega + dt * accel;
                let theta2 = theta + dt * omega2;
                vec![theta2.cos(), theta2.sin(), omega2]
            }
        };
        let reward = self.family.reward(self.speed(&next_state), self.params.psi);
        Ok(Step {
            next_state,
            reward,
            clipped,
        })
    }

    /// Execute `policy` for one full episode from the seeded reset state.
    pub fn rollout<P: Policy + ?Sized>(
        &self,
        policy: &P,
        seed: u64,
    ) -> Result<EpisodeRollout, EnvError> {
        self.rollout_from(self.reset(seed), policy, seed)
    }

    /// Execute `policy` for one full episode from `initial`.
    pub fn rollout_from<P: Policy + ?Sized>(
        &self,
        initial: Vec<f64>,
        policy: &P,
        seed: u64,
    ) -> Result<EpisodeRollout, EnvError> {
        let h = self.family.horizon;
        let mut states = Vec::with_capacity(h + 1);
        let mut actions = Vec::with_capacity(h);
        let mut rewards = Vec::with_capacity(h);
        let mut clipped_actions = 0;
        let mut s = initial;
        states.push(s.clone());
        for _ in 0..h {
            let a = policy.act(&self.family.observe(&s));
            let st = self.step(&s, &a)?;
            clipped_actions += usize::from(st.clipped);
            actions.push(a);
            rewards.push(st.reward);
            s = st.next_state;
            states.push(s.clone());
        }
        let total_return = rewards.iter().sum();
        Ok(EpisodeRollout {
            states,
            actions,
            rewards,
            total_return,
            task: self.params,
            seed,
            clipped_actions,
        })
    }
}

/// Deterministic observation → action map.
pub trait Policy {
    fn act(&self, obs: &[f64]) -> Vec<f64>;
}

impl<F: Fn(&[f64]) -> Vec<f64>> Policy for F {
    fn act(&self, obs: &[f64]) -> Vec<f64> {
        self(obs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRollout {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// Undiscounted sum of `rewards`.
    pub total_return: f64,
    pub task: TaskParams,
    pub seed: u64,
    pub clipped_actions: usize,
}
