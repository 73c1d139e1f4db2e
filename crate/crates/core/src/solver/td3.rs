use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Batch, ReplayBuffer, SolverError, Td3Config};
use crate::container;
use crate::envfam::{FamilySpec, MdpInstance, Policy, TaskParams};
use crate::numerics::{bind_mlp, Activation, AdamState, Graph, MlpSpec, OutputSquash, Tensor};

/// Deterministic actor network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

impl Actor {
    pub fn act(&self, state: &[f64]) -> Vec<f64> {
        self.spec.eval_single(&self.params, state)
    }
}

impl Policy for Actor {
    fn act(&self, state: &[f64]) -> Vec<f64> {
        Actor::act(self, state)
    }
}

/// Twin critics sharing one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticPair {
    pub spec: MlpSpec,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
}

fn sa_input(s: &[f64], a: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(s.len() + a.len());
    x.extend_from_slice(s);
    x.extend_from_slice(a);
    x
}

impl CriticPair {
    pub fn q(&self, s: &[f64], a: &[f64]) -> (f64, f64) {
        let x = sa_input(s, a);
        (
            self.spec.eval_single(&self.q1, &x)[0],
            self.spec.eval_single(&self.q2, &x)[0],
        )
    }
}

/// How the value label is derived from the twin critics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QLabelRule {
    #[default]
    Min,
    Mean,
    First,
}

impl std::str::FromStr for QLabelRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min" => Ok(Self::Min),
            "mean" => Ok(Self::Mean),
            "first" => Ok(Self::First),
            other => Err(format!("unknown q-label rule `{other}`")),
        }
    }
}

pub fn qstar_label(critics: &CriticPair, s: &[f64], a: &[f64], rule: QLabelRule) -> f64 {
    let (q1, q2) = critics.q(s, a);
    match rule {
        QLabelRule::Min => q1.min(q2),
        QLabelRule::Mean => 0.5 * (q1 + q2),
        QLabelRule::First => q1,
    }
}

/// Online and target networks plus optimizer state.
#[derive(Debug, Clone)]
pub struct Td3Nets {
    pub actor: Actor,
    pub critics: CriticPair,
    pub actor_target: Vec<f64>,
    pub q1_target: Vec<f64>,
    pub q2_target: Vec<f64>,
    actor_opt: AdamState,
    q1_opt: AdamState,
    q2_opt: AdamState,
}

impl Td3Nets {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        action_bound: f64,
        config: &Td3Config,
        rng: &mut impl Rng,
    ) -> Self {
        let h = config.hidden_dim;
        let hidden = vec![h; config.hidden_layers];
        let dims = |i: usize, o: usize| [vec![i], hidden.clone(), vec![o]].concat();
        let actor_spec = MlpSpec::new(
            dims(state_dim, action_dim),
            Activation::Relu,
            OutputSquash::Tanh {
                bound: action_bound,
            },
        );
        let critic_spec = MlpSpec::new(
            dims(state_dim + action_dim, 1),
            Activation::Relu,
            OutputSquash::None,
        );
        let actor = actor_spec.init(rng);
        let q1 = critic_spec.init(rng);
        let q2 = critic_spec.init(rng);
        Self {
            actor_opt: AdamState::new(actor.len(), config.actor_lr),
            q1_opt: AdamState::new(q1.len(), config.lr),
            q2_opt: AdamState::new(q2.len(), config.lr),
            actor_target: actor.clone(),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor: Actor {
                spec: actor_spec,
                params: actor,
            },
            critics: CriticPair {
                spec: critic_spec,
                q1,
                q2,
            },
        }
    }

    fn action_bound(&self) -> f64 {
        match self.actor.spec.output {
            OutputSquash::Tanh { bound } => bound,
            OutputSquash::None => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub critic: f64,
    /// `None` on steps where the delayed actor update is skipped.
    pub actor: Option<f64>,
}

/// `target ← (1−τ)·target + τ·online`, elementwise.
pub fn soft_update(target: &mut [f64], online: &[f64], tau: f64) {
    assert_eq!(
        target.len(),
        online.len(),
        "target and online shapes differ"
    );
    for (t, o) in target.iter_mut().zip(online) {
        *t = (1.0 - tau) * *t + tau * o;
    }
}

/// Clipped double-Q targets `r + γ·min(Q1', Q2')(s', π'(s') + ε)`.
///
/// Returns the targets and the smoothed next actions.
pub fn td3_targets(
    nets: &Td3Nets,
    batch: &Batch,
    config: &Td3Config,
    rng: &mut impl Rng,
) -> (Vec<f64>, Vec<f64>) {
    let sd = nets.actor.spec.input_dim();
    let ad = nets.actor.spec.output_dim();
    let bound = nets.action_bound();
    let noise = Normal::new(0.0, config.smoothing_noise_std).expect("finite std");
    let mut targets = Vec::with_capacity(batch.size);
    let mut next_actions = Vec::with_capacity(batch.size * ad);
    for i in 0..batch.size {
        let s2 = &batch.next_states[i * sd..(i + 1) * sd];
        let mut a2 = nets.actor.spec.eval_single(&nets.actor_target, s2);
        for a in a2.iter_mut() {
            let eps: f64 = noise.sample(rng);
            *a = (*a + eps.clamp(-config.smoothing_clip, config.smoothing_clip))
                .clamp(-bound, bound);
        }
        let x = sa_input(s2, &a2);
        let q1 = nets.critics.spec.eval_single(&nets.q1_target, &x)[0];
        let q2 = nets.critics.spec.eval_single(&nets.q2_target, &x)[0];
        targets.push(batch.rewards[i] + config.gamma * q1.min(q2));
        next_actions.extend(a2);
    }
    (targets, next_actions)
}

/// One TD3 update; `step` counts critic updates from zero.
pub fn td3_update(
    nets: &mut Td3Nets,
    batch: &Batch,
    config: &Td3Config,
    step: u64,
    rng: &mut impl Rng,
) -> Result<Losses, SolverError> {
    let n = batch.size;
    let sd = nets.actor.spec.input_dim();
    let ad = nets.actor.spec.output_dim();
    let (targets, _) = td3_targets(nets, batch, config, rng);
    let idx = vec![0usize; n];

    let critic = {
        let spec = &nets.critics.spec;
        let mut x = Vec::with_capacity(n * (sd + ad));
        for i in 0..n {
            x.extend_from_slice(&batch.states[i * sd..(i + 1) * sd]);
            x.extend_from_slice(&batch.actions[i * ad..(i + 1) * ad]);
        }
        let mut g = Graph::new();
        let xv = g.input(Tensor::matrix(n, sd + ad, x)?);
        let y = g.input(Tensor::column(targets));
        let l1 = bind_mlp(&mut g, spec, &nets.critics.q1, true);
        let l2 = bind_mlp(&mut g, spec, &nets.critics.q2, true);
        let o1 = spec.forward(&mut g, &l1, &idx, xv)?;
        let o2 = spec.forward(&mut g, &l2, &idx, xv)?;
        let m1 = g.mse(o1, y)?;
        let m2 = g.mse(o2, y)?;
        let loss = g.add(m1, m2)?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(SolverError::NonFiniteLoss {
                what: "critic",
                step,
            });
        }
        if value > config.max_critic_loss {
            return Err(SolverError::Diverged { step, loss: value });
        }
        let grads = g.backward(loss)?;
        let (mut g1, mut g2) = (Vec::new(), Vec::new());
        l1.iter().for_each(|v| grads.extend_into(*v, &mut g1));
        l2.iter().for_each(|v| grads.extend_into(*v, &mut g2));
        nets.q1_opt.step(&mut nets.critics.q1, &g1)?;
        nets.q2_opt.step(&mut nets.critics.q2, &g2)?;
        value
    };

    let actor = if step.is_multiple_of(config.actor_update_freq) {
        let (aspec, cspec) = (&nets.actor.spec, &nets.critics.spec);
        let mut g = Graph::new();
        let s = g.input(Tensor::matrix(n, sd, batch.states.clone())?);
        let la = bind_mlp(&mut g, aspec, &nets.actor.params, true);
        let lq = bind_mlp(&mut g, cspec, &nets.critics.q1, false);
        let a = aspec.forward(&mut g, &la, &idx, s)?;
        let sa = g.concat(&[s, a])?;
        let q = cspec.forward(&mut g, &lq, &idx, sa)?;
        let m = g.mean(q);
        let loss = g.scale(m, -1.0);
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(SolverError::NonFiniteLoss {
                what: "actor",
                step,
            });
        }
        let grads = g.backward(loss)?;
        let mut ga = Vec::new();
        la.iter().for_each(|v| grads.extend_into(*v, &mut ga));
        nets.actor_opt.step(&mut nets.actor.params, &ga)?;
        Some(value)
    } else {
        None
    };

    if step.is_multiple_of(config.target_update_freq) {
        soft_update(&mut nets.actor_target, &nets.actor.params, config.tau);
        soft_update(&mut nets.q1_target, &nets.critics.q1, config.tau);
        soft_update(&mut nets.q2_target, &nets.critics.q2, config.tau);
    }
    Ok(Losses { critic, actor })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub mean_return: f64,
}

/// Final networks and learning curve of one solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Td3Solution {
    pub family: FamilySpec,
    pub task: TaskParams,
    pub config: Td3Config,
    pub seed: u64,
    pub actor: Actor,
    pub critics: CriticPair,
    pub curve: Vec<CurvePoint>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    family: FamilySpec,
    task: TaskParams,
    config: Td3Config,
    seed: u64,
    actor_spec: MlpSpec,
    critic_spec: MlpSpec,
    curve: Vec<CurvePoint>,
}

const CHECKPOINT_KIND: &str = "td3";

impl Td3Solution {
    pub fn final_return(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |p| p.mean_return)
    }

    pub fn save(&self, path: &Path) -> Result<(), SolverError> {
        let header = CheckpointHeader {
            kind: CHECKPOINT_KIND.into(),
            family: self.family.clone(),
            task: self.task,
            config: self.config.clone(),
            seed: self.seed,
            actor_spec: self.actor.spec.clone(),
            critic_spec: self.critics.spec.clone(),
            curve: self.curve.clone(),
        };
        container::write(
            path,
            &header,
            &[&self.actor.params, &self.critics.q1, &self.critics.q2],
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SolverError> {
        let (h, mut blocks): (CheckpointHeader, _) = container::read(path)?;
        if h.kind != CHECKPOINT_KIND {
            return Err(SolverError::Checkpoint(format!(
                "expected a td3 checkpoint, found `{}`",
                h.kind
            )));
        }
        if blocks.len() != 3
            || blocks[0].len() != h.actor_spec.param_count()
            || blocks[1].len() != h.critic_spec.param_count()
            || blocks[2].len() != h.critic_spec.param_count()
        {
            return Err(SolverError::Checkpoint(
                "parameter blocks do not match the stored specs".into(),
            ));
        }
        let q2 = blocks.pop().expect("three blocks");
        let q1 = blocks.pop().expect("three blocks");
        let actor = blocks.pop().expect("three blocks");
        Ok(Self {
            family: h.family,
            task: h.task,
            config: h.config,
            seed: h.seed,
            actor: Actor {
                spec: h.actor_spec,
                params: actor,
            },
            critics: CriticPair {
                spec: h.critic_spec,
                q1,
                q2,
            },
            curve: h.curve,
        })
    }
}

fn eval_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (0xE7A1_0000 + k as u64)
}

/// Mean return of `n` deterministic rollouts of `policy`.
pub(crate) fn eval_policy<P: Policy + ?Sized>(
    instance: &MdpInstance,
    policy: &P,
    seed: u64,
    n: usize,
) -> Result<f64, SolverError> {
    let mut total = 0.0;
    for k in 0..n {
        total += instance.rollout(policy, eval_seed(seed, k))?.total_return;
    }
    Ok(total / n.max(1) as f64)
}

/// Train actor and twin critics on one task.
pub fn td3_train(
    instance: &MdpInstance,
    config: &Td3Config,
    seed: u64,
) -> Result<Td3Solution, SolverError> {
    config.validate()?;
    let fam = &instance.family;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs_dim = fam.obs_dim();
    let mut nets = Td3Nets::new(obs_dim, fam.action_dim, fam.action_bound, config, &mut rng);
    let mut buffer = ReplayBuffer::new(obs_dim, fam.action_dim, config.buffer_capacity);
    let bound = fam.action_bound;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut curve = Vec::new();
    let mut updates = 0u64;
    let mut state = instance.reset(rng.random());
    let mut obs = fam.observe(&state);
    let mut t_in_episode = 0usize;

    for t in 0..config.total_steps {
        let action: Vec<f64> = if t < config.exploration_steps {
            (0..fam.action_dim)
                .map(|_| rng.random_range(-bound..=bound))
                .collect()
        } else {
            let std = config.exploration_std.value(t);
            nets.actor
                .act(&obs)
                .into_iter()
                .map(|a| {
                    let eps: f64 = unit.sample(&mut rng);
                    (a + std * bound * eps).clamp(-bound, bound)
                })
                .collect()
        };
        let step = instance.step(&state, &action)?;
        t_in_episode += 1;
        let done = t_in_episode >= fam.horizon;
        let next_obs = fam.observe(&step.next_state);
        buffer.push(&obs, &action, step.reward, &next_obs, done);
        state = step.next_state;
        obs = next_obs;
        if done {
            state = instance.reset(rng.random());
            obs = fam.observe(&state);
            t_in_episode = 0;
        }

        if t + 1 >= config.seed_frames {
            let batch = buffer.sample(config.batch, &mut rng);
            td3_update(&mut nets, &batch, config, updates, &mut rng)?;
            updates += 1;
        }

        let done_steps = t + 1;
        if done_steps % config.eval_every == 0 || done_steps == config.total_steps {
            let mean_return = eval_policy(instance, &nets.actor, seed, config.eval_episodes)?;
            curve.push(CurvePoint {
                step: done_steps,
                mean_return,
            });
        }
    }

    Ok(Td3Solution {
        family: fam.clone(),
        task: instance.params,
        config: config.clone(),
        seed,
        actor: nets.actor,
        critics: nets.critics,
        curve,
    })
}
