use hyperzero_core::ablation::config_diff;
use hyperzero_core::datastore::{Dataset, Split};
use hyperzero_core::envfam::{make_family, Axis, FamilySpec, ParamRange, RewardShape, TaskParams};
use hyperzero_core::evalcli::{
    emit_report, evaluate, read_report_json, read_rows_csv, rl_cache_path, run_all,
    value_iteration_oracle, Agent, AgentKind, EvalReport, EvalRow, PipelineConfig, ReportFormat,
    ReportHeader, SpecialistRow,
};
use hyperzero_core::hyperzero::{hz_train, HzConfig, Variant};
use hyperzero_core::solver::{Profile, QLabelRule, Td3Config};

fn pointmass() -> FamilySpec {
    make_family("pointmass1d").unwrap()
}

#[test]
fn one_step_oracle_is_the_best_immediate_reward() {
    let fam = pointmass();
    let task = TaskParams::new(2.0, 1.0);
    let t = value_iteration_oracle(&fam, task, 81, 21, 1).unwrap();
    let inst = fam.instance(task);
    for (i, &v) in t.v.iter().enumerate() {
        let best = (0..21)
            .map(|j| {
                inst.step(&[0.0, v], &[-1.0 + 0.1 * j as f64])
                    .unwrap()
                    .reward
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((t.values[i] - best).abs() < 1e-12, "v={v}");
    }
}

#[test]
fn constant_reward_oracle_is_a_geometric_series() {
    let fam = FamilySpec {
        reward: RewardShape::Constant,
        ..pointmass()
    };
    let t = value_iteration_oracle(&fam, TaskParams::new(2.0, 1.0), 41, 5, 200).unwrap();
    let want = (1.0 - 0.99f64.powi(200)) / 0.01;
    assert!(
        t.values.iter().all(|v| (v - want).abs() < 1e-9),
        "{want} vs {:?}",
        &t.values[..3]
    );
}

#[test]
fn undiscounted_oracle_values_are_monotone_in_horizon() {
    let fam = FamilySpec {
        gamma: 1.0,
        ..pointmass()
    };
    let task = TaskParams::new(1.0, 1.0);
    let short = value_iteration_oracle(&fam, task, 41, 11, 5).unwrap();
    let long = value_iteration_oracle(&fam, task, 41, 11, 10).unwrap();
    assert!(short.values.iter().zip(&long.values).all(|(s, l)| l >= s));
    assert!(long.values.iter().all(|&v| v <= 10.0 + 1e-12));
}

#[test]
fn oracle_rejects_pendulum() {
    let fam = make_family("pendulumspin").unwrap();
    assert!(value_iteration_oracle(&fam, TaskParams::new(4.0, 1.0), 81, 11, 10).is_err());
}

fn sample_report() -> EvalReport {
    let header = ReportHeader {
        family: "pointmass1d".into(),
        spec_hash: pointmass().spec_hash(),
        axis: Axis::Reward,
        profile: Profile::Desk,
        base_seed: 0,
        split_seeds: vec![0, 1],
        n_tasks: 2,
        n_train: 1,
        n_test: 1,
        eval_episodes: 10,
        rollouts_per_task: 10,
        q_label: QLabelRule::Min,
        noise_std: 0.0,
        agents: vec!["hyperzero".into(), "ctx".into()],
        td3: Td3Config::desk(),
        hz: HzConfig::desk(),
        maml: None,
        variant_config_diff: None,
    };
    let specialists = vec![
        SpecialistRow {
            psi: 1.0,
            mu: 1.0,
            training_return: 180.0,
            eval_return: 181.5,
        },
        SpecialistRow {
            psi: 2.0,
            mu: 1.0,
            training_return: 170.0,
            eval_return: 172.25,
        },
    ];
    let mut rows = Vec::new();
    for seed in [0, 1] {
        for (agent, bump) in [("hyperzero", 0.0), ("ctx", -40.0)] {
            for (psi, split, ret) in [
                (1.0, Split::Train, 175.0),
                (2.0, Split::Test, 150.0 + seed as f64),
            ] {
                rows.push(EvalRow {
                    seed,
                    psi,
                    mu: 1.0,
                    split,
                    agent: agent.into(),
                    mean_return: ret + bump,
                    std_return: 0.1,
                });
            }
        }
    }
    EvalReport::build(header, specialists, rows)
}

#[test]
fn report_aggregates() {
    let r = sample_report();
    assert_eq!(r.rows.len(), 8);
    assert_eq!(r.aggregate.len(), 4);
    let hz = r.agent_summary("hyperzero").unwrap();
    assert!((hz.heldout_mean - 150.5).abs() < 1e-12);
    assert!((hz.normalized - 150.5 / 172.25).abs() < 1e-12);
    assert!((r.seed_summary(1, "ctx").unwrap().heldout_mean - 111.0).abs() < 1e-12);
    assert!(r.dominance_violations.is_empty());
}

#[test]
fn report_round_trips_through_json_and_csv() {
    let r = sample_report();
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("report.json");
    let csv = dir.path().join("report.csv");
    emit_report(&r, ReportFormat::Json, &json).unwrap();
    emit_report(&r, ReportFormat::Csv, &csv).unwrap();
    assert_eq!(read_report_json(&json).unwrap(), r);
    assert_eq!(read_rows_csv(&csv).unwrap(), r.rows);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "seed,psi,mu,split,agent,mean_return,std_return"
    );
    assert_eq!(text.lines().count(), 9);
}

#[test]
fn nearly_untrained_agent_scores_low() {
    let fam = pointmass();
    let tasks: Vec<TaskParams> = [-3.0, 2.0]
        .iter()
        .map(|&p| TaskParams::new(p, 1.0))
        .collect();
    let filler = hyperzero_core::datastore::Transition {
        psi: 2.0,
        mu: 1.0,
        s: vec![0.0],
        a_star: vec![0.0],
        s_next: vec![0.0],
        r: 0.0,
        q_star: 0.0,
        episode_id: 0,
        step_index: 0,
    };
    let per_task = vec![(tasks[1], 0.0, vec![filler]), (tasks[0], 0.0, Vec::new())];
    let d = Dataset::new(
        fam.clone(),
        Profile::Desk,
        1,
        QLabelRule::Min,
        0.0,
        per_task,
    )
    .with_train_tasks(&tasks[1..]);
    let cfg = HzConfig {
        total_steps: 1,
        eval_every: 1,
        batch: 1,
        ..HzConfig::desk()
    };
    let trained = hz_train(&d, &cfg, 0).unwrap();
    let out = evaluate(&Agent::Hyper(&trained), &fam, &tasks, 3, 0).unwrap();
    for r in out {
        assert!(r.mean < 60.0, "{:?}", r.task);
        assert_eq!(r.returns.len(), 3);
    }
}

#[test]
fn agent_names_parse() {
    for k in AgentKind::ALL {
        assert_eq!(k.name().parse::<AgentKind>().unwrap(), k);
        if let Some(v) = k.variant() {
            assert_eq!(AgentKind::from_variant(v), k);
        }
    }
    assert!("hz".parse::<AgentKind>().is_err());
}

#[test]
fn variant_configs_differ_only_in_variant() {
    let configs: Vec<HzConfig> = Variant::ALL
        .iter()
        .map(|&variant| HzConfig {
            variant,
            ..HzConfig::desk()
        })
        .collect();
    assert_eq!(config_diff(&configs).unwrap(), vec!["variant".to_string()]);
}

/// Four tasks, short episodes and tiny budgets: exercises the whole pipeline.
fn tiny_config(out: std::path::PathBuf) -> PipelineConfig {
    let family = FamilySpec {
        horizon: 40,
        psi: ParamRange {
            lo: 1.0,
            hi: 2.5,
            step: 0.5,
            default: 2.0,
        },
        ..pointmass()
    };
    let mut cfg = PipelineConfig::new(family, Axis::Reward, Profile::Desk, 0, out);
    cfg.split_seeds = vec![0, 1];
    cfg.agents = vec![
        AgentKind::HyperZero,
        AgentKind::Ctx,
        AgentKind::CtxUvfa,
        AgentKind::MamlFewShot,
    ];
    cfg.eval_episodes = 2;
    cfg.rollouts = 2;
    cfg.td3 = Td3Config {
        total_steps: 400,
        seed_frames: 100,
        exploration_steps: 50,
        eval_every: 200,
        eval_episodes: 1,
        ..Td3Config::desk()
    };
    cfg.hz = HzConfig {
        embed_dim: 8,
        main_hidden: 8,
        batch: 16,
        total_steps: 20,
        eval_every: 10,
        ..HzConfig::desk()
    };
    cfg.maml.meta_batch = 2;
    cfg
}

#[test]
fn tiny_pipeline_is_deterministic_and_complete() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_all(&tiny_config(a.path().into())).unwrap();
    let rb = run_all(&tiny_config(b.path().into())).unwrap();
    for f in ["report.json", "report.csv", "specialists.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(ra, rb);
    assert_eq!(ra.header.n_tasks, 4);
    assert_eq!((ra.header.n_train, ra.header.n_test), (3, 1));
    assert_eq!(ra.rows.len(), 2 * 4 * 4);
    assert_eq!(ra.specialists.len(), 4);
    for k in 0..2 {
        for f in ["hyperzero.ckpt", "ctx.ckpt", "ctx-uvfa.ckpt", "maml.ckpt"] {
            assert!(
                a.path().join(format!("seed{k}")).join(f).exists(),
                "seed{k}/{f}"
            );
        }
    }
    let cfg = tiny_config(a.path().into());
    assert!(rl_cache_path(&cfg, TaskParams::new(1.5, 1.0)).exists());
    // A second run on the same directory reuses the cached specialists.
    let rc = run_all(&cfg).unwrap();
    assert_eq!(rc, ra);
}
