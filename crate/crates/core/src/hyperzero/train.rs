use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grad, loss_values, BatchTensors, GraphAgent, LossTerms, LossValues};
use super::{ContextNorm, HyperNet, HzConfig, HzError};
use crate::container;
use crate::datastore::{Dataset, Transition};
use crate::envfam::FamilySpec;
use crate::numerics::AdamState;

/// Size of the fixed held-in validation batch.
pub const VALIDATION_SIZE: usize = 2048;

/// An agent whose trainable state is one flat vector.
pub trait Trainable: GraphAgent {
    fn flat(&self) -> &[f64];
    fn flat_mut(&mut self) -> &mut [f64];
    fn norm(&self) -> &ContextNorm;
}

impl Trainable for HyperNet {
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

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitCurvePoint {
    pub step: u64,
    /// Mean training loss since the previous point.
    pub train_total: f64,
    pub val: LossValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub curve: Vec<FitCurvePoint>,
    /// Validation losses before the first update.
    pub initial: LossValues,
}

/// Adam on the recorded loss over uniformly sampled training transitions.
#[allow(clippy::too_many_arguments)]
pub fn fit<A: Trainable>(
    agent: &mut A,
    dataset: &Dataset,
    steps: u64,
    batch: usize,
    lr: f64,
    eval_every: u64,
    terms: LossTerms,
    seed: u64,
) -> Result<FitOutcome, HzError> {
    if dataset.train_len() == 0 {
        return Err(HzError::EmptyTrainSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut val_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7A1D_A7E5);
    let val_rows = dataset.minibatch(VALIDATION_SIZE.min(dataset.train_len()), &mut val_rng);
    let val_batch = BatchTensors::new(&val_rows, agent.norm())?;
    let initial = loss_values(agent, &val_batch, terms)?;
    let mut adam = AdamState::new(agent.flat().len(), lr);
    let mut curve = Vec::new();
    let (mut window, mut window_n) = (0.0, 0u64);
    for step in 0..steps {
        let rows = dataset.minibatch(batch, &mut rng);
        let bt = BatchTensors::new(&rows, agent.norm())?;
        let (values, grad) = loss_and_grad(agent, &bt, terms)?;
        if !values.total.is_finite() {
            return Err(HzError::NonFinite { step });
        }
        adam.step(agent.flat_mut(), &grad)?;
        window += values.total;
        window_n += 1;
        if (step + 1) % eval_every == 0 || step + 1 == steps {
            let val = loss_values(agent, &val_batch, terms)?;
            if !val.total.is_finite() {
                return Err(HzError::NonFinite { step });
            }
            curve.push(FitCurvePoint {
                step: step + 1,
                train_total: window / window_n as f64,
                val,
            });
            window = 0.0;
            window_n = 0;
        }
    }
    Ok(FitOutcome { curve, initial })
}

/// A trained hypernetwork with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HzTrained {
    pub family: FamilySpec,
    pub net: HyperNet,
    pub seed: u64,
    pub fit: FitOutcome,
}

fn terms_for(config: &HzConfig) -> LossTerms {
    LossTerms {
        value: config.variant.has_critic(),
        td_weight: config.effective_td_weight(),
    }
}

/// Losses of `net` on a batch, using the terms its variant trains.
pub fn hz_loss(net: &HyperNet, batch: &[&Transition]) -> Result<LossValues, HzError> {
    let bt = BatchTensors::new(batch, &net.norm)?;
    Ok(loss_values(net, &bt, terms_for(&net.config))?)
}

pub fn hz_train(dataset: &Dataset, config: &HzConfig, seed: u64) -> Result<HzTrained, HzError> {
    config.validate()?;
    let family = dataset.header.family.clone();
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = HyperNet::new(&family, config.clone(), &mut init_rng)?;
    let fit = fit(
        &mut net,
        dataset,
        config.total_steps,
        config.batch,
        config.lr,
        config.eval_every,
        terms_for(config),
        seed.wrapping_add(1),
    )?;
    Ok(HzTrained {
        family,
        net,
        seed,
        fit,
    })
}

pub(crate) const HZ_KIND: &str = "hyperzero";

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    trained: HzTrained,
}

impl HzTrained {
    /// Parameters go in a binary block; everything else in the JSON header.
    pub fn save(&self, path: &Path) -> Result<(), HzError> {
        let mut light = self.clone();
        light.net.params.data = Vec::new();
        container::write(
            path,
            &Header {
                kind: HZ_KIND.into(),
                trained: light,
            },
            &[&self.net.params.data],
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HzError> {
        let (h, mut blocks): (Header, _) = container::read(path)?;
        if h.kind != HZ_KIND {
            return Err(HzError::Checkpoint(format!(
                "expected a hyperzero checkpoint, found `{}`",
                h.kind
            )));
        }
        let mut trained = h.trained;
        let expected: usize = trained.net.params.entries.iter().map(|e| e.len()).sum();
        match blocks.pop() {
            Some(data) if blocks.is_empty() && data.len() == expected => {
                trained.net.params.data = data
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

/// Kind tag stored in a checkpoint header, without loading parameters.
pub fn checkpoint_kind(path: &Path) -> Result<String, HzError> {
    #[derive(Deserialize)]
    struct Kind {
        kind: String,
    }
    Ok(container::read_header::<Kind>(path)?.kind)
}
