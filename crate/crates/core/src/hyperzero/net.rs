use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::GraphAgent;
use super::{ContextNorm, HzConfig, HzError};
use crate::envfam::{FamilySpec, Policy};
use crate::numerics::{
    fan_in_uniform, uniform, Activation, Graph, MlpSpec, NumericsError, OutputSquash, ParamSet, Var,
};

/// Role of a generated network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Policy,
    Critic,
}

/// A generated main network: architecture plus flat parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightBundle {
    pub role: Role,
    pub spec: MlpSpec,
    pub flat: Vec<f64>,
}

impl WeightBundle {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.spec.eval_single(&self.flat, x)
    }
}

impl Policy for WeightBundle {
    fn act(&self, obs: &[f64]) -> Vec<f64> {
        self.eval(obs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedWeights {
    pub policy: WeightBundle,
    pub critic: Option<WeightBundle>,
}

/// Policy and critic architectures for a family.
pub fn main_specs(family: &FamilySpec, hidden: usize) -> (MlpSpec, MlpSpec) {
    let (od, ad) = (family.obs_dim(), family.action_dim);
    let policy = MlpSpec::new(
        vec![od, hidden, ad],
        Activation::Relu,
        OutputSquash::Tanh {
            bound: family.action_bound,
        },
    );
    let critic = MlpSpec::new(
        vec![od + ad, hidden, 1],
        Activation::Relu,
        OutputSquash::None,
    );
    (policy, critic)
}

/// The hypernetwork `H_Θ`: a residual context embedding followed by one
/// linear head per generated layer. `params` is the whole of `Θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperNet {
    pub config: HzConfig,
    pub norm: ContextNorm,
    pub gamma: f64,
    pub policy_spec: MlpSpec,
    pub critic_spec: Option<MlpSpec>,
    pub params: ParamSet,
}

/// `y = x·W + b` with a bank-format row `[W (in×out, row-major) | b]`.
pub(crate) fn affine(row: &[f64], x: &[f64], outputs: usize) -> Vec<f64> {
    let (w, b) = row.split_at(x.len() * outputs);
    let mut y = b.to_vec();
    for (k, &xk) in x.iter().enumerate() {
        for (yj, wj) in y.iter_mut().zip(&w[k * outputs..(k + 1) * outputs]) {
            *yj += xk * wj;
        }
    }
    y
}

/// Residual context trunk shared by the hypernetwork and the baselines.
///
/// Layout inside a [`ParamSet`], starting at block `first`:
/// `in` (2→E), then for each block `l1` and `l2` (E→E).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trunk {
    pub embed_dim: usize,
    pub n_blocks: usize,
    pub first: usize,
}

impl Trunk {
    pub const CONTEXT_DIM: usize = 2;

    pub fn n_entries(&self) -> usize {
        1 + 2 * self.n_blocks
    }

    /// Append trunk blocks; each block's second layer starts at zero so the
    /// residual block is the identity at initialization.
    pub fn init(embed_dim: usize, n_blocks: usize, ps: &mut ParamSet, rng: &mut impl Rng) -> Self {
        let e = embed_dim;
        let first = ps.entries.len();
        let c = Self::CONTEXT_DIM;
        ps.push("trunk.in", 1, c * e + e, fan_in_uniform(rng, c, c * e + e));
        for b in 0..n_blocks {
            ps.push(
                format!("trunk.block{b}.l1"),
                1,
                e * e + e,
                fan_in_uniform(rng, e, e * e + e),
            );
            ps.push(
                format!("trunk.block{b}.l2"),
                1,
                e * e + e,
                vec![0.0; e * e + e],
            );
        }
        Self {
            embed_dim,
            n_blocks,
            first,
        }
    }

    pub fn record(
        &self,
        g: &mut Graph,
        params: &[Var],
        contexts: Var,
    ) -> Result<Var, NumericsError> {
        let e = self.embed_dim;
        let rows = g.value(contexts).rows();
        let zero = vec![0usize; rows];
        let mut h = g.bank_linear(contexts, params[self.first], &zero, Self::CONTEXT_DIM, e)?;
        for b in 0..self.n_blocks {
            let t = g.relu(h);
            let t = g.bank_linear(t, params[self.first + 1 + 2 * b], &zero, e, e)?;
            let t = g.relu(t);
            let t = g.bank_linear(t, params[self.first + 2 + 2 * b], &zero, e, e)?;
            h = g.add(h, t)?;
        }
        Ok(h)
    }

    pub fn eval(&self, ps: &ParamSet, u: &[f64]) -> Vec<f64> {
        let e = self.embed_dim;
        let mut h = affine(ps.block(self.first), u, e);
        for b in 0..self.n_blocks {
            let t: Vec<f64> = h.iter().map(|v| v.max(0.0)).collect();
            let t = affine(ps.block(self.first + 1 + 2 * b), &t, e);
            let t: Vec<f64> = t.iter().map(|v| v.max(0.0)).collect();
            let t = affine(ps.block(self.first + 2 + 2 * b), &t, e);
            h.iter_mut().zip(t).for_each(|(a, b)| *a += b);
        }
        h
    }
}

/// Generated-weight banks for the unique contexts of a batch.
#[derive(Debug, Clone)]
pub struct GeneratedBanks {
    pub policy: Vec<Var>,
    pub critic: Option<Vec<Var>>,
}

impl HyperNet {
    pub fn new(family: &FamilySpec, config: HzConfig, rng: &mut impl Rng) -> Result<Self, HzError> {
        config.validate()?;
        let (policy_spec, critic_spec) = main_specs(family, config.main_hidden);
        let critic_spec = config.variant.has_critic().then_some(critic_spec);
        let e = config.embed_dim;
        let mut params = ParamSet::new();
        Trunk::init(e, config.n_blocks, &mut params, rng);
        let head_bound = 0.1 / (e as f64).sqrt();
        let mut add_heads = |prefix: &str, spec: &MlpSpec, params: &mut ParamSet| {
            for l in 0..spec.n_layers() {
                let p = spec.layer_param_count(l);
                let mut row = uniform(rng, head_bound, e * p);
                row.extend(fan_in_uniform(rng, spec.layer_shape(l).0, p));
                params.push(format!("head.{prefix}.{l}"), 1, e * p + p, row);
            }
        };
        add_heads("policy", &policy_spec, &mut params);
        if let Some(spec) = &critic_spec {
            add_heads("critic", spec, &mut params);
        }
        Ok(Self {
            norm: ContextNorm::from_family(family),
            gamma: family.gamma,
            config,
            policy_spec,
            critic_spec,
            params,
        })
    }

    pub fn trunk(&self) -> Trunk {
        Trunk {
            embed_dim: self.config.embed_dim,
            n_blocks: self.config.n_blocks,
            first: 0,
        }
    }

    fn policy_head(&self, l: usize) -> usize {
        self.trunk().n_entries() + l
    }

    fn critic_head(&self, l: usize) -> usize {
        self.trunk().n_entries() + self.policy_spec.n_layers() + l
    }

    /// Number of heads, one per generated layer.
    pub fn n_heads(&self) -> usize {
        self.params.entries.len() - self.trunk().n_entries()
    }

    /// Task embedding `z` for a raw context.
    pub fn embed_task(&self, psi: f64, mu: f64) -> Result<Vec<f64>, HzError> {
        let u = self.norm.normalize(psi, mu)?;
        Ok(self.trunk().eval(&self.params, &u))
    }

    pub fn generate_weights(&self, z: &[f64]) -> GeneratedWeights {
        let gen = |spec: &MlpSpec, role: Role, head: &dyn Fn(usize) -> usize| {
            let mut flat = Vec::with_capacity(spec.param_count());
            for l in 0..spec.n_layers() {
                flat.extend(affine(
                    self.params.block(head(l)),
                    z,
                    spec.layer_param_count(l),
                ));
            }
            WeightBundle {
                role,
                spec: spec.clone(),
                flat,
            }
        };
        GeneratedWeights {
            policy: gen(&self.policy_spec, Role::Policy, &|l| self.policy_head(l)),
            critic: self
                .critic_spec
                .as_ref()
                .map(|spec| gen(spec, Role::Critic, &|l| self.critic_head(l))),
        }
    }

    pub fn weights_for(&self, psi: f64, mu: f64) -> Result<GeneratedWeights, HzError> {
        Ok(self.generate_weights(&self.embed_task(psi, mu)?))
    }

    pub fn hz_forward_policy(&self, psi: f64, mu: f64, s: &[f64]) -> Result<Vec<f64>, HzError> {
        Ok(self.weights_for(psi, mu)?.policy.eval(s))
    }

    pub fn hz_forward_critic(
        &self,
        psi: f64,
        mu: f64,
        s: &[f64],
        a: &[f64],
    ) -> Result<f64, HzError> {
        let critic = self.weights_for(psi, mu)?.critic.ok_or(HzError::NoCritic)?;
        let x: Vec<f64> = s.iter().chain(a).copied().collect();
        Ok(critic.eval(&x)[0])
    }
}

impl GraphAgent for HyperNet {
    type Ctx = GeneratedBanks;

    fn bind(&self, g: &mut Graph, requires_grad: bool) -> Vec<Var> {
        self.params.bind(g, requires_grad)
    }

    fn context(
        &self,
        g: &mut Graph,
        params: &[Var],
        contexts: Var,
    ) -> Result<GeneratedBanks, NumericsError> {
        let z = self.trunk().record(g, params, contexts)?;
        let rows = g.value(contexts).rows();
        let zero = vec![0usize; rows];
        let e = self.config.embed_dim;
        let mut heads =
            |spec: &MlpSpec, head: &dyn Fn(usize) -> usize| -> Result<Vec<Var>, NumericsError> {
                (0..spec.n_layers())
                    .map(|l| g.bank_linear(z, params[head(l)], &zero, e, spec.layer_param_count(l)))
                    .collect()
            };
        let policy = heads(&self.policy_spec, &|l| self.policy_head(l))?;
        let critic = match &self.critic_spec {
            Some(spec) => Some(heads(spec, &|l| self.critic_head(l))?),
            None => None,
        };
        Ok(GeneratedBanks { policy, critic })
    }

    fn policy(
        &self,
        g: &mut Graph,
        _params: &[Var],
        ctx: &GeneratedBanks,
        index: &[usize],
        s: Var,
    ) -> Result<Var, NumericsError> {
        self.policy_spec.forward(g, &ctx.policy, index, s)
    }

    fn critic(
        &self,
        g: &mut Graph,
        _params: &[Var],
        ctx: &GeneratedBanks,
        index: &[usize],
        s: Var,
        a: Var,
    ) -> Result<Option<Var>, NumericsError> {
        match (&self.critic_spec, &ctx.critic) {
            (Some(spec), Some(banks)) => {
                let x = g.concat(&[s, a])?;
                Ok(Some(spec.forward(g, banks, index, x)?))
            }
            _ => Ok(None),
        }
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }
}
