//! Reference agents: context-conditioned policy, the same with a UVFA critic
//! and TD term, and a first-order MAML meta-policy.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::datastore::{Dataset, Split, Transition};
use crate::envfam::{FamilySpec, Policy};
use crate::hyperzero::{
    fit, BatchTensors, ContextNorm, FitOutcome, GraphAgent, HzConfig, HzError, LossTerms,
    LossValues, Trainable, Trunk,
};
use crate::hyperzero::{loss_and_grad, loss_values};
use crate::numerics::{
    fan_in_uniform, Activation, AdamState, Graph, MlpSpec, NumericsError, OutputSquash, ParamSet,
    Var,
};

/// Policy (and optional critic) MLPs fed with `concat(z, s[, a])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtxAgent {
    pub embed_dim: usize,
    pub n_blocks: usize,
    pub with_uvfa: bool,
    pub norm: ContextNorm,
    pub gamma: f64,
    pub policy_spec: MlpSpec,
    pub critic_spec: Option<MlpSpec>,
    pub params: ParamSet,
}

impl CtxAgent {
    /// Same trunk, hidden width and embedding size as the hypernetwork profile.
    pub fn new(family: &FamilySpec, arch: &HzConfig, with_uvfa: bool, rng: &mut impl Rng) -> Self {
        let (e, h) = (arch.embed_dim, arch.main_hidden);
        let (od, ad) = (family.obs_dim(), family.action_dim);
        let mut params = ParamSet::new();
        Trunk::init(e, arch.n_blocks, &mut params, rng);
        let policy_spec = MlpSpec::new(
            vec![e + od, h, ad],
            Activation::Relu,
            OutputSquash::Tanh {
                bound: family.action_bound,
            },
        );
        let critic_spec = with_uvfa.then(|| {
            MlpSpec::new(
                vec![e + od + ad, h, 1],
                Activation::Relu,
                OutputSquash::None,
            )
        });
        let mut add = |prefix: &str, spec: &MlpSpec| {
            for l in 0..spec.n_layers() {
                let n = spec.layer_param_count(l);
                params.push(
                    format!("{prefix}.{l}"),
                    1,
                    n,
                    fan_in_uniform(rng, spec.layer_shape(l).0, n),
                );
            }
        };
        add("policy", &policy_spec);
        if let Some(spec) = &critic_spec {
            add("critic", spec);
        }
        Self {
            embed_dim: e,
            n_blocks: arch.n_blocks,
            with_uvfa,
            norm: ContextNorm::from_family(family),
            gamma: family.gamma,
            policy_spec,
            critic_spec,
            params,
        }
    }

    fn trunk(&self) -> Trunk {
        Trunk {
            embed_dim: self.embed_dim,
            n_blocks: self.n_blocks,
            first: 0,
        }
    }

    fn policy_first(&self) -> usize {
        self.trunk().n_entries()
    }

    fn critic_first(&self) -> usize {
        self.policy_first() + self.policy_spec.n_layers()
    }

    fn flat_range(&self, first: usize, n_layers: usize) -> &[f64] {
        let start = self.params.entries[first].offset;
        let last = &self.params.entries[first + n_layers - 1];
        &self.params.data[start..last.offset + last.len()]
    }

    /// Deterministic action for a context and observation.
    pub fn ctx_act(&self, psi: f64, mu: f64, s: &[f64]) -> Result<Vec<f64>, HzError> {
        let u = self.norm.normalize(psi, mu)?;
        let mut x = self.trunk().eval(&self.params, &u);
        x.extend_from_slice(s);
        let flat = self.flat_range(self.policy_first(), self.policy_spec.n_layers());
        Ok(self.policy_spec.eval_single(flat, &x))
    }

    /// A policy bound to one context.
    pub fn policy_for(&self, psi: f64, mu: f64) -> Result<CtxPolicy, HzError> {
        let u = self.norm.normalize(psi, mu)?;
        Ok(CtxPolicy {
            spec: self.policy_spec.clone(),
            flat: self
                .flat_range(self.policy_first(), self.policy_spec.n_layers())
                .to_vec(),
            z: self.trunk().eval(&self.params, &u),
        })
    }

    fn z_rows(&self, g: &mut Graph, z: Var, index: &[usize]) -> Result<Var, NumericsError> {
        g.gather_rows(z, index)
    }
}

/// Policy MLP with a fixed task embedding prepended to every observation.
#[derive(Debug, Clone)]
pub struct CtxPolicy {
    spec: MlpSpec,
    flat: Vec<f64>,
    z: Vec<f64>,
}

impl Policy for CtxPolicy {
    fn act(&self, obs: &[f64]) -> Vec<f64> {
        let mut x = self.z.clone();
        x.extend_from_slice(obs);
        self.spec.eval_single(&self.flat, &x)
    }
}

impl GraphAgent for CtxAgent {
    type Ctx = Var;

    fn bind(&self, g: &mut Graph, requires_grad: bool) -> Vec<Var> {
        self.params.bind(g, requires_grad)
    }

    fn context(&self, g: &mut Graph, params: &[Var], contexts: Var) -> Result<Var, NumericsError> {
        self.trunk().record(g, params, contexts)
    }

    fn policy(
        &self,
        g: &mut Graph,
        params: &[Var],
        z: &Var,
        index: &[usize],
        s: Var,
    ) -> Result<Var, NumericsError> {
        let zs = self.z_rows(g, *z, index)?;
        let x = g.concat(&[zs, s])?;
        let first = self.policy_first();
        let layers = &params[first..first + self.policy_spec.n_layers()];
        self.policy_spec
            .forward(g, layers, &vec![0; index.len()], x)
    }

    fn critic(
        &self,
        g: &mut Graph,
        params: &[Var],
        z: &Var,
        index: &[usize],
        s: Var,
        a: Var,
    ) -> Result<Option<Var>, NumericsError> {
        let Some(spec) = &self.critic_spec else {
            return Ok(None);
        };
        let zs = self.z_rows(g, *z, index)?;
        let x = g.concat(&[zs, s, a])?;
        let first = self.critic_first();
        let layers = &params[first..first + spec.n_layers()];
        Ok(Some(spec.forward(g, layers, &vec![0; index.len()], x)?))
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Trainable for CtxAgent {
    fn flat(&self) -> &[f64] {
        &self.params.data
    }

    fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.params.data
    }

    fn norm(&self) -> &ContextNorm {
        &self.norm
    }
}

/// Loss terms of a context-conditioned baseline: action error only, or
/// with a UVFA critic, the full prediction loss plus the TD term.
pub fn ctx_terms(with_uvfa: bool, td_weight: f64) -> LossTerms {
    if with_uvfa {
        LossTerms {
            value: true,
            td_weight,
        }
    } else {
        LossTerms {
            value: false,
            td_weight: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Ctx,
    CtxUvfa,
    Maml,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Ctx => "ctx",
            BaselineKind::CtxUvfa => "ctx-uvfa",
            BaselineKind::Maml => "maml",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ctx" => Ok(BaselineKind::Ctx),
            "ctx-uvfa" => Ok(BaselineKind::CtxUvfa),
            "maml" => Ok(BaselineKind::Maml),
            other => Err(format!("unknown baseline `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtxTrained {
    pub kind: BaselineKind,
    pub family: FamilySpec,
    pub agent: CtxAgent,
    pub seed: u64,
    pub fit: FitOutcome,
    /// Fraction of inner steps that lowered their support loss (MAML only).
    pub support_improvement_rate: Option<f64>,
    pub maml: Option<MamlConfig>,
}

/// Train a context-conditioned baseline with the hypernetwork's optimizer,
/// batch size and step budget.
pub fn ctx_train(
    dataset: &Dataset,
    arch: &HzConfig,
    with_uvfa: bool,
    seed: u64,
) -> Result<CtxTrained, HzError> {
    arch.validate()?;
    let family = dataset.header.family.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = CtxAgent::new(&family, arch, with_uvfa, &mut rng);
    let fit = fit(
        &mut agent,
        dataset,
        arch.total_steps,
        arch.batch,
        arch.lr,
        arch.eval_every,
        ctx_terms(with_uvfa, arch.td_weight),
        seed.wrapping_add(1),
    )?;
    let kind = if with_uvfa {
        BaselineKind::CtxUvfa
    } else {
        BaselineKind::Ctx
    };
    Ok(CtxTrained {
        kind,
        family,
        agent,
        seed,
        fit,
        support_improvement_rate: None,
        maml: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MamlConfig {
    pub meta_lr: f64,
    pub fast_lr: f64,
    pub meta_batch: usize,
    pub k_shot: usize,
    /// Inner gradient steps during meta-training.
    pub inner_steps: usize,
    /// Gradient steps taken by [`maml_adapt`] in few-shot mode.
    pub adapt_steps: usize,
}

impl Default for MamlConfig {
    fn default() -> Self {
        Self {
            meta_lr: 1e-4,
            fast_lr: 1e-2,
            meta_batch: 32,
            k_shot: 10,
            inner_steps: 1,
            adapt_steps: 1,
        }
    }
}

impl MamlConfig {
    pub fn validate(&self) -> Result<(), HzError> {
        if !(self.meta_lr > 0.0 && self.fast_lr > 0.0) || self.meta_batch == 0 || self.k_shot == 0 {
            return Err(HzError::InvalidConfig(
                "MAML rates, meta batch and k-shot must be positive".into(),
            ));
        }
        Ok(())
    }
}

const POLICY_ONLY: LossTerms = LossTerms {
    value: false,
    td_weight: 0.0,
};

fn support_loss(agent: &CtxAgent, rows: &[&Transition]) -> Result<(LossValues, Vec<f64>), HzError> {
    let bt = BatchTensors::new(rows, &agent.norm)?;
    Ok(loss_and_grad(agent, &bt, POLICY_ONLY)?)
}

fn sgd(agent: &mut CtxAgent, grad: &[f64], lr: f64) {
    agent
        .params
        .data
        .iter_mut()
        .zip(grad)
        .for_each(|(p, g)| *p -= lr * g);
}

/// `steps` plain gradient steps at the fast learning rate on `support`.
/// Zero steps returns the meta-parameters unchanged (zero-shot mode).
pub fn maml_adapt(
    agent: &CtxAgent,
    support: &[&Transition],
    config: &MamlConfig,
    steps: usize,
) -> Result<CtxAgent, HzError> {
    let mut adapted = agent.clone();
    for _ in 0..steps {
        let (_, grad) = support_loss(&adapted, support)?;
        sgd(&mut adapted, &grad, config.fast_lr);
    }
    Ok(adapted)
}

/// First-order MAML on the action loss.
pub fn maml_train(
    dataset: &Dataset,
    arch: &HzConfig,
    config: &MamlConfig,
    seed: u64,
) -> Result<CtxTrained, HzError> {
    arch.validate()?;
    config.validate()?;
    let family = dataset.header.family.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = CtxAgent::new(&family, arch, false, &mut rng);
    let tasks: Vec<&[Transition]> = dataset
        .header
        .tasks
        .iter()
        .filter(|t| t.split == Split::Train)
        .filter_map(|t| dataset.task_transitions(t.task))
        .filter(|trs| !trs.is_empty())
        .collect();
    if tasks.is_empty() {
        return Err(HzError::EmptyTrainSet);
    }
    let meta_batch = config.meta_batch.min(tasks.len());
    let mut adam = AdamState::new(agent.params.len(), config.meta_lr);
    let mut val_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7A1D_A7E5);
    let val_rows = dataset.minibatch(2048.min(dataset.train_len()), &mut val_rng);
    let val_batch = BatchTensors::new(&val_rows, &agent.norm)?;
    let initial = loss_values(&agent, &val_batch, POLICY_ONLY)?;
    let (mut improved, mut inner_total) = (0usize, 0usize);
    let mut curve = Vec::new();
    let (mut window, mut window_n) = (0.0, 0u64);
    for step in 0..arch.total_steps {
        let chosen: Vec<&&[Transition]> = tasks.choose_multiple(&mut rng, meta_batch).collect();
        let mut meta_grad = vec![0.0; agent.params.len()];
        let mut query_total = 0.0;
        for trs in chosen {
            let support: Vec<&Transition> = (0..config.k_shot)
                .map(|_| &trs[rng.random_range(0..trs.len())])
                .collect();
            let query: Vec<&Transition> = (0..config.k_shot)
                .map(|_| &trs[rng.random_range(0..trs.len())])
                .collect();
            let mut fast = agent.clone();
            let mut before = None;
            for _ in 0..config.inner_steps {
                let (vals, grad) = support_loss(&fast, &support)?;
                before.get_or_insert(vals.total);
                sgd(&mut fast, &grad, config.fast_lr);
            }
            if let Some(before) = before {
                let after = loss_values(
                    &fast,
                    &BatchTensors::new(&support, &fast.norm)?,
                    POLICY_ONLY,
                )?
                .total;
                improved += usize::from(after < before);
                inner_total += 1;
            }
            let (q, grad) = support_loss(&fast, &query)?;
            if !q.total.is_finite() {
                return Err(HzError::NonFinite { step });
            }
            query_total += q.total;
            meta_grad
                .iter_mut()
                .zip(&grad)
                .for_each(|(m, g)| *m += g / meta_batch as f64);
        }
        adam.step(&mut agent.params.data, &meta_grad)?;
        window += query_total / meta_batch as f64;
        window_n += 1;
        if (step + 1) % arch.eval_every == 0 || step + 1 == arch.total_steps {
            let val = loss_values(&agent, &val_batch, POLICY_ONLY)?;
            curve.push(crate::hyperzero::FitCurvePoint {
                step: step + 1,
                train_total: window / window_n as f64,
                val,
            });
            window = 0.0;
            window_n = 0;
        }
    }
    Ok(CtxTrained {
        kind: BaselineKind::Maml,
        family,
        agent,
        seed,
        fit: FitOutcome { curve, initial },
        support_improvement_rate: (inner_total > 0).then(|| improved as f64 / inner_total as f64),
        maml: Some(*config),
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    trained: CtxTrained,
}

pub(crate) const CTX_KIND: &str = "baseline";

impl CtxTrained {
    pub fn save(&self, path: &Path) -> Result<(), HzError> {
        let mut light = self.clone();
        light.agent.params.data = Vec::new();
        container::write(
            path,
            &Header {
                kind: CTX_KIND.into(),
                trained: light,
            },
            &[&self.agent.params.data],
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HzError> {
        let (h, mut blocks): (Header, _) = container::read(path)?;
        if h.kind != CTX_KIND {
            return Err(HzError::Checkpoint(format!(
                "expected a baseline checkpoint, found `{}`",
                h.kind
            )));
        }
        let mut trained = h.trained;
        let expected: usize = trained.agent.params.entries.iter().map(|e| e.len()).sum();
        match blocks.pop() {
            Some(data) if blocks.is_empty() && data.len() == expected => {
                trained.agent.params.data = data
            }
            _ => {
                return Err(HzError::Checkpoint(
                    "parameter block does not match the layout".into(),
                ))
            }
        }
        Ok(trained)
    }
}
