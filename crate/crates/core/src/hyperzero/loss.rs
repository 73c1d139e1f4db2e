use serde::{Deserialize, Serialize};

use crate::datastore::Transition;
use crate::envfam::TaskParams;
use crate::numerics::{Graph, NumericsError, Tensor, Var};

use super::{ContextNorm, HzError};

/// A minibatch laid out as matrices, with contexts deduplicated.
#[derive(Debug, Clone)]
pub struct BatchTensors {
    pub s: Tensor,
    pub a: Tensor,
    pub s_next: Tensor,
    pub r: Tensor,
    pub q: Tensor,
    /// Normalized unique contexts `[C, 2]`.
    pub contexts: Tensor,
    pub unique: Vec<TaskParams>,
    /// Row of `contexts` used by each sample.
    pub index: Vec<usize>,
    /// When set, used as the next action of the TD target instead of the
    /// policy output, making it a constant of the loss.
    pub frozen_next: Option<Tensor>,
}

impl BatchTensors {
    pub fn new(batch: &[&Transition], norm: &ContextNorm) -> Result<Self, HzError> {
        let first = batch
            .first()
            .ok_or_else(|| HzError::InvalidConfig("empty batch".into()))?;
        let (od, ad) = (first.s.len(), first.a_star.len());
        let n = batch.len();
        let mut s = Vec::with_capacity(n * od);
        let mut a = Vec::with_capacity(n * ad);
        let mut s_next = Vec::with_capacity(n * od);
        let mut r = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        let mut unique: Vec<TaskParams> = Vec::new();
        let mut ctx = Vec::new();
        let mut index = Vec::with_capacity(n);
        for t in batch {
            s.extend_from_slice(&t.s);
            a.extend_from_slice(&t.a_star);
            s_next.extend_from_slice(&t.s_next);
            r.push(t.r);
            q.push(t.q_star);
            let task = t.task();
            let c = match unique.iter().position(|u| *u == task) {
                Some(c) => c,
                None => {
                    ctx.extend(norm.normalize(task.psi, task.mu)?);
                    unique.push(task);
                    unique.len() - 1
                }
            };
            index.push(c);
        }
        Ok(Self {
            s: Tensor::matrix(n, od, s)?,
            a: Tensor::matrix(n, ad, a)?,
            s_next: Tensor::matrix(n, od, s_next)?,
            r: Tensor::column(r),
            q: Tensor::column(q),
            contexts: Tensor::matrix(unique.len(), 2, ctx)?,
            unique,
            index,
            frozen_next: None,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

/// A context-conditioned actor(-critic) that can be recorded on a graph.
///
/// Both the hypernetwork and the context-conditioned baselines implement
/// this, so their losses share one code path.
pub trait GraphAgent {
    /// Per-batch context features (generated weights, or an embedding).
    type Ctx;

    /// Leaves for every trainable parameter, in flat-vector order.
    fn bind(&self, g: &mut Graph, requires_grad: bool) -> Vec<Var>;

    fn context(
        &self,
        g: &mut Graph,
        params: &[Var],
        contexts: Var,
    ) -> Result<Self::Ctx, NumericsError>;

    fn policy(
        &self,
        g: &mut Graph,
        params: &[Var],
        ctx: &Self::Ctx,
        index: &[usize],
        s: Var,
    ) -> Result<Var, NumericsError>;

    /// `None` for agents without a critic.
    fn critic(
        &self,
        g: &mut Graph,
        params: &[Var],
        ctx: &Self::Ctx,
        index: &[usize],
        s: Var,
        a: Var,
    ) -> Result<Option<Var>, NumericsError>;

    fn gamma(&self) -> f64;
}

/// Which terms enter the total loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub value: bool,
    pub td_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub policy: f64,
    pub value: f64,
    /// `L_pred`: action error plus value error.
    pub pred: f64,
    pub td: f64,
    pub total: f64,
}

/// Graph nodes of the recorded loss.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub pred: Var,
    pub td: Option<Var>,
    pub total: Var,
}

/// Record `L_pred + w·L_TD` for `agent` on `batch`.
///
/// `L_pred = mse(Q(s,a*), q*) + mse(π(s), a*)` and
/// `L_TD = mse(r + γ·Q(s', sg(π(s'))), q*)`.
pub fn record_loss<A: GraphAgent>(
    g: &mut Graph,
    agent: &A,
    params: &[Var],
    batch: &BatchTensors,
    terms: LossTerms,
) -> Result<(LossNodes, LossValues), NumericsError> {
    let ctx_in = g.input(batch.contexts.clone());
    let ctx = agent.context(g, params, ctx_in)?;
    let s = g.input(batch.s.clone());
    let a_star = g.input(batch.a.clone());
    let pi = agent.policy(g, params, &ctx, &batch.index, s)?;
    let policy_loss = g.mse(pi, a_star)?;
    let mut values = LossValues {
        policy: g.scalar(policy_loss),
        value: 0.0,
        pred: 0.0,
        td: 0.0,
        total: 0.0,
    };
    let mut pred = policy_loss;
    let mut td = None;
    if terms.value || terms.td_weight > 0.0 {
        let q_star = g.input(batch.q.clone());
        if terms.value {
            let q = agent
                .critic(g, params, &ctx, &batch.index, s, a_star)?
                .ok_or_else(|| missing_critic(g))?;
            let value_loss = g.mse(q, q_star)?;
            values.value = g.scalar(value_loss);
            pred = g.add(value_loss, policy_loss)?;
        }
        if terms.td_weight > 0.0 {
            let s_next = g.input(batch.s_next.clone());
            let a_bar = match &batch.frozen_next {
                Some(a) => g.input(a.clone()),
                None => {
                    let a_next = agent.policy(g, params, &ctx, &batch.index, s_next)?;
                    g.stop_gradient(a_next)
                }
            };
            let q_next = agent
                .critic(g, params, &ctx, &batch.index, s_next, a_bar)?
                .ok_or_else(|| missing_critic(g))?;
            let r = g.input(batch.r.clone());
            let disc = g.scale(q_next, agent.gamma());
            let target = g.add(r, disc)?;
            let td_loss = g.mse(target, q_star)?;
            values.td = g.scalar(td_loss);
            td = Some(td_loss);
        }
    }
    values.pred = g.scalar(pred);
    let total = match td {
        Some(td_loss) => {
            let weighted = g.scale(td_loss, terms.td_weight);
            g.add(pred, weighted)?
        }
        None => pred,
    };
    values.total = g.scalar(total);
    Ok((LossNodes { pred, td, total }, values))
}

fn missing_critic(g: &Graph) -> NumericsError {
    NumericsError::Shape {
        node: format!("critic@{}", g.len()),
        detail: "agent has no critic".into(),
    }
}

/// Loss value and flat gradient with respect to every bound parameter.
pub fn loss_and_grad<A: GraphAgent>(
    agent: &A,
    batch: &BatchTensors,
    terms: LossTerms,
) -> Result<(LossValues, Vec<f64>), NumericsError> {
    let mut g = Graph::new();
    let params = agent.bind(&mut g, true);
    let (nodes, values) = record_loss(&mut g, agent, &params, batch, terms)?;
    let grads = g.backward(nodes.total)?;
    let mut flat = Vec::new();
    for p in &params {
        grads.extend_into(*p, &mut flat);
    }
    Ok((values, flat))
}

/// Loss values without gradients.
pub fn loss_values<A: GraphAgent>(
    agent: &A,
    batch: &BatchTensors,
    terms: LossTerms,
) -> Result<LossValues, NumericsError> {
    let mut g = Graph::new();
    let params = agent.bind(&mut g, false);
    Ok(record_loss(&mut g, agent, &params, batch, terms)?.1)
}

/// Policy output at the next states of `batch`.
pub fn next_actions<A: GraphAgent>(
    agent: &A,
    batch: &BatchTensors,
) -> Result<Tensor, NumericsError> {
    let mut g = Graph::new();
    let params = agent.bind(&mut g, false);
    let ctx_in = g.input(batch.contexts.clone());
    let ctx = agent.context(&mut g, &params, ctx_in)?;
    let s_next = g.input(batch.s_next.clone());
    let a = agent.policy(&mut g, &params, &ctx, &batch.index, s_next)?;
    Ok(g.value(a).clone())
}

/// Gradient of `L_TD` alone. With `frozen`, the next action enters as a
/// precomputed constant instead of a stop-gradient node, which gives the
/// reference that the stop-gradient path must match exactly.
pub fn td_gradient<A: GraphAgent>(
    agent: &A,
    batch: &BatchTensors,
    frozen: bool,
) -> Result<(f64, Vec<f64>), NumericsError> {
    let mut g = Graph::new();
    let params = agent.bind(&mut g, true);
    let ctx_in = g.input(batch.contexts.clone());
    let ctx = agent.context(&mut g, &params, ctx_in)?;
    let s_next = g.input(batch.s_next.clone());
    let a_bar = if frozen {
        g.input(next_actions(agent, batch)?)
    } else {
        let a_next = agent.policy(&mut g, &params, &ctx, &batch.index, s_next)?;
        g.stop_gradient(a_next)
    };
    let q_next = agent
        .critic(&mut g, &params, &ctx, &batch.index, s_next, a_bar)?
        .ok_or_else(|| missing_critic(&g))?;
    let r = g.input(batch.r.clone());
    let q_star = g.input(batch.q.clone());
    let disc = g.scale(q_next, agent.gamma());
    let target = g.add(r, disc)?;
    let td = g.mse(target, q_star)?;
    let grads = g.backward(td)?;
    let mut flat = Vec::new();
    for p in &params {
        grads.extend_into(*p, &mut flat);
    }
    Ok((g.scalar(td), flat))
}
