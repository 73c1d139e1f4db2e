//! Acceptance suite: one pass/fail line per criterion.
//!
//! Criteria 1-3, 8 and 9 always run. The experiment criteria (4-7, 10) train
//! real agents and run only with `HYPERZERO_ACCEPTANCE=full`; otherwise they
//! print SKIP. Exit status is non-zero when any criterion that ran failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use hyperzero_core::ablation::config_diff;
use hyperzero_core::datastore::{
    split_tasks, Dataset, Split, SplitSpec, Transition, DEFAULT_EPISODES, TRAIN_FRACTION,
};
use hyperzero_core::envfam::{make_family, Axis, FamilySpec, RewardShape, TaskParams};
use hyperzero_core::evalcli::{
    compare_critic, evaluate_agents, run_all, split_dataset, train_agents, value_iteration_oracle,
    AgentKind, EvalReport, PipelineConfig, DATASET_FILE,
};
use hyperzero_core::hyperzero::{
    hz_loss, loss_and_grad, next_actions, td_gradient, BatchTensors, HyperNet, HzConfig, Variant,
};
use hyperzero_core::numerics::grad_check;
use hyperzero_core::seeds::{derive_seed, Stage};
use hyperzero_core::solver::{qstar_label, td3_train, Profile, QLabelRule, Td3Config};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

struct Line {
    id: u8,
    name: &'static str,
    outcome: Option<Check>,
    secs: f64,
}

fn run(id: u8, name: &'static str, f: impl FnOnce() -> Check) -> Line {
    let t = Instant::now();
    let outcome = Some(f());
    let line = Line {
        id,
        name,
        outcome,
        secs: t.elapsed().as_secs_f64(),
    };
    print_line(&line);
    line
}

fn skip(id: u8, name: &'static str) -> Line {
    let line = Line {
        id,
        name,
        outcome: None,
        secs: 0.0,
    };
    print_line(&line);
    line
}

fn print_line(l: &Line) {
    let (tag, detail) = match &l.outcome {
        Some(Ok(d)) => ("PASS", d.as_str()),
        Some(Err(d)) => ("FAIL", d.as_str()),
        None => ("SKIP", "set HYPERZERO_ACCEPTANCE=full to run"),
    };
    println!(
        "criterion {:>2} {tag} [{:>7.1}s] {}: {detail}",
        l.id, l.secs, l.name
    );
}

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_batch(family: &FamilySpec, n: usize, rng: &mut impl Rng) -> Vec<Transition> {
    let od = family.obs_dim();
    (0..n)
        .map(|i| Transition {
            psi: rng.random_range(family.psi.lo..=family.psi.hi),
            mu: rng.random_range(family.mu.lo..=family.mu.hi),
            s: (0..od).map(|_| rng.random_range(-1.0..1.0)).collect(),
            a_star: vec![rng.random_range(-0.9..0.9)],
            s_next: (0..od).map(|_| rng.random_range(-1.0..1.0)).collect(),
            r: rng.random_range(0.0..1.0),
            q_star: rng.random_range(0.0..100.0),
            episode_id: 0,
            step_index: i as u32,
        })
        .collect()
}

fn with_params(net: &HyperNet, p: &[f64]) -> HyperNet {
    let mut n = net.clone();
    n.params.data = p.to_vec();
    n
}

/// Central differences against the tape gradient of the full loss, desk architecture.
fn autodiff() -> Check {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for family in ["pointmass1d", "pendulumspin"] {
        let family = make_family(family).unwrap();
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net =
                HyperNet::new(&family, HzConfig::desk(), &mut rng).map_err(|e| e.to_string())?;
            let rows = random_batch(&family, 8, &mut rng);
            let refs: Vec<&Transition> = rows.iter().collect();
            let mut bt = BatchTensors::new(&refs, &net.norm).map_err(|e| e.to_string())?;
            // The stopped next action is held fixed so differences do not move it.
            bt.frozen_next = Some(next_actions(&net, &bt).map_err(|e| e.to_string())?);
            let terms = hyperzero_core::hyperzero::LossTerms {
                value: true,
                td_weight: 1.0,
            };
            let loss = |p: &[f64]| {
                let (v, g) = loss_and_grad(&with_params(&net, p), &bt, terms)?;
                Ok((v.total, g))
            };
            let r = grad_check(loss, &net.params.data, 1e-6, 200, &mut rng)
                .map_err(|e| e.to_string())?;
            worst = worst.max(r.max_rel_error);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst < 1e-4 && secs < 60.0,
        format!("max rel error {worst:.2e} over 40 nets (limit 1e-4), {secs:.1}s (limit 60s)"),
    )
}

/// The TD gradient through the stopped next action must be exactly the
/// gradient with that action supplied as a constant.
fn stop_gradient() -> Check {
    let family = make_family("pointmass1d").unwrap();
    let mut mismatched = 0;
    let mut nonzero_policy = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = HyperNet::new(&family, HzConfig::desk(), &mut rng).map_err(|e| e.to_string())?;
        let rows = random_batch(&family, 8, &mut rng);
        let refs: Vec<&Transition> = rows.iter().collect();
        let bt = BatchTensors::new(&refs, &net.norm).map_err(|e| e.to_string())?;
        let stopped = td_gradient(&net, &bt, false).map_err(|e| e.to_string())?;
        let frozen = td_gradient(&net, &bt, true).map_err(|e| e.to_string())?;
        mismatched += usize::from(stopped != frozen);
        let start = net.params.entries[net.params.index_of("head.policy.0").unwrap()].offset;
        let end = net.params.entries[net.params.index_of("head.policy.1").unwrap()]
            .range()
            .end;
        nonzero_policy += stopped.1[start..end].iter().filter(|g| **g != 0.0).count();
    }
    verdict(
        mismatched == 0 && nonzero_policy == 0,
        format!("{mismatched}/20 gradients differ from the frozen-action gradient; {nonzero_policy} non-zero policy-head entries"),
    )
}

fn head_bias(net: &mut HyperNet, name: &str, values: &[f64]) {
    let e = net.config.embed_dim;
    let range = net.params.entries[net.params.index_of(name).unwrap()].range();
    let p = range.len() / (e + 1);
    assert_eq!(values.len(), p, "{name}");
    net.params.data[range.start..range.start + e * p].fill(0.0);
    net.params.data[range.start + e * p..range.end].copy_from_slice(values);
}

/// Two-transition chain with q* = r + gamma q*' and generated nets that fit it exactly.
fn fixpoint() -> Check {
    let family = make_family("pointmass1d").unwrap();
    let cfg = HzConfig {
        embed_dim: 4,
        main_hidden: 2,
        ..HzConfig::desk()
    };
    let mut net = HyperNet::new(&family, cfg, &mut ChaCha8Rng::seed_from_u64(3))
        .map_err(|e| e.to_string())?;
    // Context-independent nets: pi(s) = tanh(0.25), Q(s, a) = 3 relu(s + 2) - 1 for s > -2.
    head_bias(&mut net, "head.policy.0", &[0.0; 4]);
    head_bias(&mut net, "head.policy.1", &[0.0, 0.0, 0.25]);
    head_bias(&mut net, "head.critic.0", &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    head_bias(&mut net, "head.critic.1", &[3.0, 0.0, -1.0]);
    let task = TaskParams::new(2.0, 1.0);
    let a = net
        .hz_forward_policy(task.psi, task.mu, &[0.0])
        .map_err(|e| e.to_string())?;
    let states = [0.1, 0.3, 0.6];
    let q: Vec<f64> = states
        .iter()
        .map(|&s| net.hz_forward_critic(task.psi, task.mu, &[s], &a).unwrap())
        .collect();
    let chain: Vec<Transition> = (0..2)
        .map(|i| Transition {
            psi: task.psi,
            mu: task.mu,
            s: vec![states[i]],
            a_star: a.clone(),
            s_next: vec![states[i + 1]],
            r: q[i] - family.gamma * q[i + 1],
            q_star: q[i],
            episode_id: 0,
            step_index: i as u32,
        })
        .collect();
    let refs: Vec<&Transition> = chain.iter().collect();
    let v = hz_loss(&net, &refs).map_err(|e| e.to_string())?;
    verdict(
        v.pred <= 1e-28 && v.td <= 1e-28,
        format!("L_pred {:.1e}, L_TD {:.1e} (limit 1e-28)", v.pred, v.td),
    )
}

/// Published protocol values under `Profile::Paper`.
fn protocol() -> Check {
    let hz = HzConfig::paper();
    let td3 = Td3Config::paper();
    let grid = make_family("pointmass1d")
        .unwrap()
        .task_grid(Axis::Reward, false);
    let (train, test) = split_tasks(&grid, SplitSpec::new(0)).map_err(|e| e.to_string())?;
    let checks = [
        ("hz batch 512", hz.batch == 512),
        ("hz lr 1e-4", hz.lr == 1e-4),
        ("embedding 256", hz.embed_dim == 256),
        ("main hidden 256", hz.main_hidden == 256),
        ("td3 lr 1e-4", td3.lr == 1e-4 && td3.actor_lr == 1e-4),
        ("td3 batch 256", td3.batch == 256),
        ("tau 0.01", td3.tau == 0.01),
        ("smoothing clip 0.3", td3.smoothing_clip == 0.3),
        ("d = 2", td3.actor_update_freq == 2),
        (
            "1e6 steps",
            td3.total_steps == 1_000_000 && td3.exploration_std.duration == 1_000_000,
        ),
        ("10 collection episodes", DEFAULT_EPISODES == 10),
        ("85/15 fraction", TRAIN_FRACTION == 0.85),
        (
            "34/6 split of 40 tasks",
            (grid.len(), train.len(), test.len()) == (40, 34, 6),
        ),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} protocol values match", checks.len())
        } else {
            format!("mismatch: {}", failed.join(", "))
        },
    )
}

/// Full reward-axis grid with 2000 transitions per task.
fn grid_dataset() -> Dataset {
    let fam = make_family("pointmass1d").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let per_task = fam
        .task_grid(Axis::Reward, false)
        .into_iter()
        .map(|task| {
            let mut rows = random_batch(&fam, 2000, &mut rng);
            for (i, r) in rows.iter_mut().enumerate() {
                (r.psi, r.mu, r.episode_id, r.step_index) =
                    (task.psi, task.mu, (i / 200) as u32, (i % 200) as u32);
            }
            (task, 150.0, rows)
        })
        .collect();
    let mut d = Dataset::new(
        fam,
        Profile::Desk,
        DEFAULT_EPISODES,
        QLabelRule::Min,
        0.0,
        per_task,
    );
    d.apply_split(SplitSpec::new(derive_seed(0, Stage::Split, 0)))
        .unwrap();
    d
}

fn dataset_round_trip() -> Check {
    let d = grid_dataset();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (p1, p2) = (dir.path().join("a.hz"), dir.path().join("b.hz"));
    d.write(&p1).map_err(|e| e.to_string())?;
    let back = Dataset::read(&p1).map_err(|e| e.to_string())?;
    back.write(&p2).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&p1).map_err(|e| e.to_string())?;
    let exact = back == d && bytes == std::fs::read(&p2).map_err(|e| e.to_string())?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut undetected = 0;
    for _ in 0..20 {
        let mut bad = bytes.clone();
        let i = rng.random_range(0..bad.len());
        bad[i] ^= 0x10;
        std::fs::write(&p2, &bad).map_err(|e| e.to_string())?;
        undetected += usize::from(Dataset::read(&p2).is_ok());
    }

    let test: Vec<TaskParams> = d.header.tasks_with(Split::Test);
    let batch = HzConfig::desk().batch;
    let mut leaked = 0usize;
    for _ in 0..100_000 {
        leaked += d
            .minibatch(batch, &mut rng)
            .iter()
            .filter(|t| test.contains(&t.task()))
            .count();
    }
    verdict(
        exact && undetected == 0 && leaked == 0,
        format!(
            "bit-exact {exact}; {undetected}/20 corrupted files accepted; {leaked} test rows in 1e5 batches of {batch}"
        ),
    )
}

/// Seeded states spread over the reachable speeds.
fn probe_states(family: &FamilySpec, n: usize) -> Vec<Vec<f64>> {
    let bound = family.speed_bound().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    (0..n)
        .map(|_| family.observe(&[0.0, rng.random_range(-bound..bound)]))
        .collect()
}

fn geometric_critic() -> Check {
    let t = Instant::now();
    let family = FamilySpec {
        reward: RewardShape::Constant,
        ..make_family("pointmass1d").unwrap()
    };
    let sol = td3_train(
        &family.instance(TaskParams::new(2.0, 1.0)),
        &Td3Config::desk(),
        0,
    )
    .map_err(|e| e.to_string())?;
    let target = (1.0 - family.gamma.powi(family.horizon as i32)) / (1.0 - family.gamma);
    let values: Vec<f64> = probe_states(&family, 50)
        .iter()
        .map(|s| qstar_label(&sol.critics, s, &sol.actor.act(s), QLabelRule::Min))
        .collect();
    let inside = values
        .iter()
        .filter(|v| (*v - target).abs() <= 0.1 * target)
        .count();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let secs = t.elapsed().as_secs_f64();
    verdict(
        inside == values.len() && secs < 300.0,
        format!("{inside}/50 states within 10% of {target:.2}; critic mean {mean:.2}, range [{lo:.2}, {hi:.2}]; {secs:.0}s (limit 300s)"),
    )
}

fn bellman_oracle() -> Check {
    let t = Instant::now();
    let family = make_family("pointmass1d").unwrap();
    let task = TaskParams::new(2.0, 1.0);
    // Same seed as this task's specialist in the pipeline.
    let index = family
        .task_grid(Axis::Reward, false)
        .iter()
        .position(|t| *t == task)
        .unwrap() as u64;
    let sol = td3_train(
        &family.instance(task),
        &Td3Config::desk(),
        derive_seed(0, Stage::Solver, index),
    )
    .map_err(|e| e.to_string())?;
    let table =
        value_iteration_oracle(&family, task, 81, 5, family.horizon).map_err(|e| e.to_string())?;
    let c = compare_critic(&sol, &table);
    let secs = t.elapsed().as_secs_f64();
    verdict(
        c.relative <= 0.10 && secs < 600.0,
        format!(
            "median |Q - V| {:.2} = {:.1}% of oracle range {:.2} (limit 10%); {secs:.0}s (limit 600s)",
            c.median_abs_error,
            100.0 * c.relative,
            c.value_range
        ),
    )
}

fn pipeline_config(out: PathBuf) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(
        make_family("pointmass1d").unwrap(),
        Axis::Reward,
        Profile::Desk,
        0,
        out,
    );
    cfg.jobs = std::env::var("HYPERZERO_JOBS")
        .ok()
        .and_then(|j| j.parse().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cfg
}

fn fresh(dir: &Path) -> PathBuf {
    let _ = std::fs::remove_dir_all(dir);
    dir.to_path_buf()
}

fn zero_shot(report: &EvalReport, secs: f64) -> Check {
    let hz = report
        .agent_summary("hyperzero")
        .ok_or("no hyperzero summary")?;
    let wins = report
        .header
        .split_seeds
        .iter()
        .filter(|&&k| {
            let h = report.seed_summary(k, "hyperzero").map(|s| s.heldout_mean);
            let c = report.seed_summary(k, "ctx").map(|s| s.heldout_mean);
            matches!((h, c), (Some(h), Some(c)) if h > c)
        })
        .count();
    let ctx = report
        .agent_summary("ctx")
        .map_or(f64::NAN, |s| s.heldout_mean);
    let uvfa = report
        .agent_summary("ctx-uvfa")
        .map_or(f64::NAN, |s| s.heldout_mean);
    verdict(
        hz.normalized >= 0.8 && wins >= 4,
        format!(
            "(a) held-out {:.1} vs specialist {:.1}, ratio {:.3} (need 0.8); (b) beats ctx in {wins}/5 seeds (need 4); ctx {ctx:.1}, ctx-uvfa {uvfa:.1}; {} dominance violations; {:.0} min on {} thread(s)",
            hz.heldout_mean,
            hz.specialist_heldout_mean,
            hz.normalized,
            report.dominance_violations.len(),
            secs / 60.0,
            rayon::current_num_threads().max(1),
        ),
    )
}

/// Train the policy-only variant on the same splits and seeds as the full
/// hypernetwork of `report`, then compare held-out returns per seed.
fn ablation(report: &EvalReport, out: &Path) -> Check {
    let mut cfg = pipeline_config(out.to_path_buf());
    cfg.agents = vec![AgentKind::HyperZeroPi];
    let diff = config_diff(&[
        HzConfig {
            variant: Variant::Pi,
            ..cfg.hz.clone()
        },
        cfg.hz.clone(),
    ])
    .map_err(|e| e.to_string())?;
    let dataset = Dataset::read(&out.join(DATASET_FILE)).map_err(|e| e.to_string())?;
    let mut wins = 0;
    let mut pairs = Vec::new();
    for &k in &cfg.split_seeds {
        let split = split_dataset(&cfg, &dataset, k).map_err(|e| e.to_string())?;
        let trained = train_agents(&cfg, &split, k).map_err(|e| e.to_string())?;
        let rows = evaluate_agents(&cfg, &split, &trained).map_err(|e| e.to_string())?;
        let test: Vec<f64> = rows
            .iter()
            .filter(|r| r.split == Split::Test)
            .map(|r| r.mean_return)
            .collect();
        let pi = test.iter().sum::<f64>() / test.len() as f64;
        let full = report
            .seed_summary(k, "hyperzero")
            .ok_or("missing seed")?
            .heldout_mean;
        wins += usize::from(full >= pi);
        pairs.push(format!("{full:.1}/{pi:.1}"));
    }
    verdict(
        wins >= 3 && diff == ["variant"],
        format!(
            "pi_q_td >= pi in {wins}/5 seeds (need 3); per seed {}; config diff {:?}",
            pairs.join(" "),
            diff
        ),
    )
}

fn determinism(a: &Path, b: &Path) -> Check {
    let report = run_all(&pipeline_config(fresh(b))).map_err(|e| e.to_string())?;
    let mut same = Vec::new();
    for f in ["report.json", "report.csv", "specialists.csv"] {
        let x = std::fs::read(a.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = std::fs::read(b.join(f)).map_err(|e| format!("{f}: {e}"))?;
        same.push((f, x == y, x.len()));
    }
    let ok = same.iter().all(|s| s.1);
    let detail = same.iter().map(|(f, eq, n)| {
        format!(
            "{f} {} ({n} bytes)",
            if *eq { "identical" } else { "DIFFERS" }
        )
    });
    verdict(
        ok && !report.rows.is_empty(),
        detail.collect::<Vec<_>>().join(", "),
    )
}

fn main() -> ExitCode {
    let full = std::env::var("HYPERZERO_ACCEPTANCE").is_ok_and(|v| v == "full");
    let root = std::env::var("HYPERZERO_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|_| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
    let mut lines = vec![
        run(1, "autodiff correctness", autodiff),
        run(2, "stop-gradient exactness", stop_gradient),
        run(3, "fixpoint property", fixpoint),
    ];
    if full {
        lines.push(run(4, "geometric-series critic", geometric_critic));
        lines.push(run(5, "Bellman oracle", bellman_oracle));
        let run_a = fresh(&root.join("run_a"));
        let t = Instant::now();
        let report = run_all(&pipeline_config(run_a.clone()));
        let secs = t.elapsed().as_secs_f64();
        let report_ref = report.as_ref().map_err(|e| e.to_string());
        lines.push(run(6, "zero-shot generalization", || {
            zero_shot(report_ref.clone()?, secs)
        }));
        lines.push(run(7, "ablation direction", || {
            ablation(report_ref.clone()?, &run_a)
        }));
        lines.push(run(8, "protocol fidelity", protocol));
        lines.push(run(9, "dataset round-trip", dataset_round_trip));
        lines.push(run(10, "determinism", || {
            determinism(&run_a, &root.join("run_b"))
        }));
    } else {
        for (id, name) in [
            (4, "geometric-series critic"),
            (5, "Bellman oracle"),
            (6, "zero-shot generalization"),
            (7, "ablation direction"),
        ] {
            lines.push(skip(id, name));
        }
        lines.push(run(8, "protocol fidelity", protocol));
        lines.push(run(9, "dataset round-trip", dataset_round_trip));
        lines.push(skip(10, "determinism"));
    }
    let failed: Vec<u8> = lines
        .iter()
        .filter(|l| matches!(l.outcome, Some(Err(_))))
        .map(|l| l.id)
        .collect();
    let passed = lines
        .iter()
        .filter(|l| matches!(l.outcome, Some(Ok(_))))
        .count();
    let skipped = lines.iter().filter(|l| l.outcome.is_none()).count();
    println!(
        "acceptance: {passed} passed, {} failed {failed:?}, {skipped} skipped",
        failed.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
