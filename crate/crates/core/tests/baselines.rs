use hyperzero_core::baselines::{
    ctx_terms, ctx_train, maml_adapt, maml_train, BaselineKind, CtxAgent, CtxTrained, MamlConfig,
};
use hyperzero_core::datastore::{Dataset, Transition};
use hyperzero_core::envfam::{make_family, Policy, TaskParams};
use hyperzero_core::hyperzero::{
    loss_and_grad, loss_values, next_actions, BatchTensors, HzConfig, LossTerms,
};
use hyperzero_core::numerics::grad_check;
use hyperzero_core::solver::{Profile, QLabelRule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arch(steps: u64) -> HzConfig {
    HzConfig {
        embed_dim: 16,
        main_hidden: 16,
        batch: 64,
        lr: 1e-3,
        total_steps: steps,
        eval_every: 100,
        ..HzConfig::desk()
    }
}

/// Tasks whose optimal action is a smooth function of speed and target.
fn toy_dataset(tasks: &[TaskParams]) -> Dataset {
    let family = make_family("pointmass1d").unwrap();
    let per_task = tasks
        .iter()
        .map(|&task| {
            let rows: Vec<Transition> = (0..200)
                .map(|i| {
                    let v = (i as f64 * 0.37 + task.psi).sin();
                    Transition {
                        psi: task.psi,
                        mu: task.mu,
                        s: vec![v],
                        a_star: vec![(0.5 * task.psi - v).tanh() * 0.8],
                        s_next: vec![v * 0.9],
                        r: 0.1,
                        q_star: 5.0 + v,
                        episode_id: 0,
                        step_index: i,
                    }
                })
                .collect();
            (task, 0.0, rows)
        })
        .collect();
    let d = Dataset::new(family, Profile::Desk, 1, QLabelRule::Min, 0.0, per_task);
    d.with_train_tasks(tasks)
}

fn with_params(agent: &CtxAgent, p: &[f64]) -> CtxAgent {
    let mut a = agent.clone();
    a.params.data = p.to_vec();
    a
}

#[test]
fn ctx_single_task_regression_reduces_action_loss() {
    let d = toy_dataset(&[TaskParams::new(1.0, 1.0)]);
    let out = ctx_train(&d, &arch(400), false, 0).unwrap();
    let last = out.fit.curve.last().unwrap();
    assert!(
        last.val.pred < 0.1 * out.fit.initial.pred,
        "{:?} -> {:?}",
        out.fit.initial,
        last.val
    );
    assert_eq!(out.kind, BaselineKind::Ctx);
    assert!(out.agent.critic_spec.is_none());
}

#[test]
fn ctx_loss_is_action_mse_of_its_own_policy() {
    let d = toy_dataset(&[TaskParams::new(1.0, 1.0), TaskParams::new(-2.0, 1.0)]);
    let agent = CtxAgent::new(
        &d.header.family,
        &arch(1),
        false,
        &mut ChaCha8Rng::seed_from_u64(3),
    );
    let rows: Vec<&Transition> = d.transitions.iter().step_by(7).collect();
    let bt = BatchTensors::new(&rows, &agent.norm).unwrap();
    let got = loss_values(&agent, &bt, ctx_terms(false, 1.0)).unwrap();
    let want = rows
        .iter()
        .map(|r| (agent.ctx_act(r.psi, r.mu, &r.s).unwrap()[0] - r.a_star[0]).powi(2))
        .sum::<f64>()
        / rows.len() as f64;
    assert!(
        (got.policy - want).abs() < 1e-12,
        "{} vs {want}",
        got.policy
    );
    assert_eq!((got.value, got.td), (0.0, 0.0));
    let policy = agent.policy_for(1.0, 1.0).unwrap();
    assert_eq!(policy.act(&[0.3]), agent.ctx_act(1.0, 1.0, &[0.3]).unwrap());
}

#[test]
fn uvfa_gradients_match_finite_differences() {
    let d = toy_dataset(&[TaskParams::new(1.0, 1.0), TaskParams::new(-2.0, 1.0)]);
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let small = HzConfig {
            embed_dim: 8,
            main_hidden: 6,
            ..arch(1)
        };
        let agent = CtxAgent::new(&d.header.family, &small, true, &mut rng);
        let rows: Vec<&Transition> = (0..8)
            .map(|_| &d.transitions[rng.random_range(0..d.transitions.len())])
            .collect();
        let mut bt = BatchTensors::new(&rows, &agent.norm).unwrap();
        bt.frozen_next = Some(next_actions(&agent, &bt).unwrap());
        let terms: LossTerms = ctx_terms(true, 1.0);
        let loss = |p: &[f64]| {
            let (v, g) = loss_and_grad(&with_params(&agent, p), &bt, terms)?;
            Ok((v.total, g))
        };
        let r = grad_check(loss, &agent.params.data, 1e-6, 200, &mut rng).unwrap();
        assert!(r.max_rel_error < 1e-4, "seed {seed}: {r:?}");
    }
}

#[test]
fn zero_adaptation_steps_is_identity() {
    let d = toy_dataset(&[TaskParams::new(1.0, 1.0)]);
    let agent = CtxAgent::new(
        &d.header.family,
        &arch(1),
        false,
        &mut ChaCha8Rng::seed_from_u64(1),
    );
    let support: Vec<&Transition> = d.transitions.iter().take(10).collect();
    let same = maml_adapt(&agent, &support, &MamlConfig::default(), 0).unwrap();
    assert_eq!(same, agent);
    let moved = maml_adapt(&agent, &support, &MamlConfig::default(), 1).unwrap();
    assert_ne!(moved.params.data, agent.params.data);
}

#[test]
fn maml_inner_steps_mostly_lower_support_loss() {
    let tasks: Vec<TaskParams> = [-3.0, -1.0, 1.0, 3.0]
        .iter()
        .map(|&p| TaskParams::new(p, 1.0))
        .collect();
    let d = toy_dataset(&tasks);
    let config = MamlConfig {
        meta_lr: 1e-3,
        meta_batch: 4,
        ..MamlConfig::default()
    };
    let out = maml_train(&d, &arch(100), &config, 5).unwrap();
    let rate = out.support_improvement_rate.unwrap();
    assert!(rate >= 0.9, "support improvement rate {rate}");
    assert_eq!(out.kind, BaselineKind::Maml);
    assert_eq!(out.maml, Some(config));
}

#[test]
fn maml_rejects_invalid_config() {
    let d = toy_dataset(&[TaskParams::new(1.0, 1.0)]);
    let config = MamlConfig {
        k_shot: 0,
        ..MamlConfig::default()
    };
    assert!(maml_train(&d, &arch(1), &config, 0).is_err());
}

#[test]
fn baselines_are_seed_deterministic_and_round_trip() {
    let d = toy_dataset(&[TaskParams::new(1.0, 1.0), TaskParams::new(-1.0, 1.0)]);
    let a = ctx_train(&d, &arch(50), true, 9).unwrap();
    let b = ctx_train(&d, &arch(50), true, 9).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ctx.ckpt");
    a.save(&path).unwrap();
    assert_eq!(CtxTrained::load(&path).unwrap(), a);
    assert_eq!(
        hyperzero_core::hyperzero::checkpoint_kind(&path).unwrap(),
        "baseline"
    );
}
