use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hyperzero_core::ablation::run_ablation;
use hyperzero_core::baselines::{ctx_train, maml_train, BaselineKind, CtxTrained};
use hyperzero_core::datastore::{Dataset, SplitSpec, DEFAULT_EPISODES};
use hyperzero_core::envfam::{make_family, Axis, TaskParams};
use hyperzero_core::evalcli::{
    collect_dataset, compare_critic, emit_report, evaluate_agents, load_specialists,
    read_report_json, report_header, run_all, specialist_rows, train_specialist, train_specialists,
    value_iteration_oracle, AgentKind, EvalReport, PipelineConfig, ReportFormat, TrainedAgents,
    DATASET_FILE, DEFAULT_EVAL_EPISODES,
};
use hyperzero_core::hyperzero::{checkpoint_kind, hz_train, HzConfig, HzTrained, Variant};
use hyperzero_core::seeds::{derive_seed, Stage};
use hyperzero_core::solver::{Profile, QLabelRule, Td3Solution};
use hyperzero_service::{serve, ServeConfig};

#[derive(Parser)]
#[command(
    name = "hyperzero",
    version,
    about = "Zero-shot policies from task parameters via hypernetworks"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Global {
    /// Task family: pointmass1d or pendulumspin.
    #[arg(long, global = true, default_value = "pointmass1d")]
    family: String,
    /// Which task parameters vary: reward, dynamics or both.
    #[arg(long, global = true, default_value = "reward")]
    axis: Axis,
    /// Budget profile: desk or paper.
    #[arg(long, global = true, default_value = "desk")]
    profile: Profile,
    /// Base seed; every stage seed is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train one TD3 specialist per grid task (cached under OUT/rl).
    TrainRl {
        /// Only the task with this desired speed or target.
        #[arg(long)]
        psi: Option<f64>,
        /// Only tasks with this dynamics parameter.
        #[arg(long)]
        mu: Option<f64>,
    },
    /// Roll out every specialist and write the near-optimal dataset.
    Collect {
        /// Specialist checkpoint directory [default: OUT/rl].
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Rollouts per specialist.
        #[arg(long, default_value_t = DEFAULT_EPISODES)]
        episodes: usize,
        /// Value label from the twin critics: min, mean or first.
        #[arg(long, default_value = "min")]
        q_label: QLabelRule,
        /// Gaussian action noise during collection.
        #[arg(long, default_value_t = 0.0)]
        noise_std: f64,
        /// Dataset path [default: OUT/dataset.hzd].
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Label dataset tasks train or test.
    Split {
        /// Dataset path [default: OUT/dataset.hzd].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Split index; the split seed is derived from the base seed and this.
        #[arg(long, default_value_t = 0)]
        index: u64,
        /// Where to write the split dataset [default: overwrite DATA].
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a hypernetwork on the train tasks of a split dataset.
    TrainHz {
        /// Split dataset.
        #[arg(long)]
        data: PathBuf,
        /// Which heads and losses: pi, pi_q or pi_q_td.
        #[arg(long, default_value = "pi_q_td")]
        variant: Variant,
        /// Weight of the TD term.
        #[arg(long)]
        td_weight: Option<f64>,
        /// Override the profile step budget.
        #[arg(long)]
        steps: Option<u64>,
        /// Split index used to derive the training seed.
        #[arg(long, default_value_t = 0)]
        index: u64,
        /// Checkpoint path [default: OUT/<agent name>.ckpt].
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Train a context-conditioned or meta-learned baseline.
    TrainBaseline {
        /// ctx, ctx-uvfa or maml.
        #[arg(long)]
        kind: BaselineKind,
        /// Split dataset.
        #[arg(long)]
        data: PathBuf,
        /// Override the profile step budget.
        #[arg(long)]
        steps: Option<u64>,
        /// Split index used to derive the training seed.
        #[arg(long, default_value_t = 0)]
        index: u64,
        /// Checkpoint path [default: OUT/<kind>.ckpt].
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Zero-shot evaluation of one checkpoint on every dataset task.
    Eval {
        /// Split dataset.
        #[arg(long)]
        data: PathBuf,
        /// Agent checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Agent name; maml checkpoints accept maml-zero-shot or maml-few-shot.
        #[arg(long)]
        agent: AgentKind,
        /// Evaluation episodes per task.
        #[arg(long, default_value_t = DEFAULT_EVAL_EPISODES)]
        episodes: usize,
        /// Split index recorded in the rows.
        #[arg(long, default_value_t = 0)]
        index: u64,
        /// Specialist checkpoints used for the normalized summary [default: OUT/rl].
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// json or csv.
        #[arg(long, default_value = "json")]
        format: ReportFormat,
        /// Report path [default: OUT/eval-<agent>.<format>].
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Finite-horizon value iteration on the point mass, optionally against a critic.
    Oracle {
        /// Target speed.
        #[arg(long)]
        psi: f64,
        /// Mass.
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        /// Velocity grid points.
        #[arg(long, default_value_t = 81)]
        v_grid: usize,
        /// Discrete actions evenly spaced in [-1, 1].
        #[arg(long, default_value_t = 5)]
        actions: usize,
        /// Defaults to the family horizon.
        #[arg(long)]
        horizon: Option<usize>,
        /// TD3 checkpoint whose critic is compared with the oracle.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the summary of a JSON report, optionally re-emitting it.
    Report {
        /// JSON report [default: OUT/report.json].
        #[arg(long)]
        input: Option<PathBuf>,
        /// Re-emit as json or csv.
        #[arg(long)]
        format: Option<ReportFormat>,
        /// Where to re-emit [default: stdout].
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Serve checkpoints over HTTP.
    Serve {
        /// JSON service config.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured bind address.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Full pipeline: specialists, dataset, splits, agents, evaluation, reports.
    All {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated agents.
        #[arg(long, value_delimiter = ',', default_values_t = AgentKind::DEFAULT.to_vec())]
        agents: Vec<AgentKind>,
    },
    /// Train hypernetwork variants under identical seeds and splits.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated variants.
        #[arg(long, value_delimiter = ',', default_values_t = Variant::ALL.to_vec())]
        variants: Vec<Variant>,
    },
    /// Write a dataset as JSON lines.
    Export {
        /// Dataset to export.
        #[arg(long)]
        data: PathBuf,
        /// Output JSON lines file.
        #[arg(long)]
        jsonl: PathBuf,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Number of random train/test splits.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Evaluation episodes per task.
    #[arg(long, default_value_t = DEFAULT_EVAL_EPISODES)]
    episodes: usize,
    /// Collection rollouts per specialist.
    #[arg(long, default_value_t = DEFAULT_EPISODES)]
    rollouts: usize,
    /// Value label from the twin critics: min, mean or first.
    #[arg(long, default_value = "min")]
    q_label: QLabelRule,
    /// Gaussian action noise during collection.
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    /// Override the hypernetwork and baseline step budget.
    #[arg(long)]
    hz_steps: Option<u64>,
    /// Override the per-task TD3 step budget.
    #[arg(long)]
    rl_steps: Option<u64>,
}

fn pipeline(g: &Global) -> Result<PipelineConfig> {
    let family = make_family(&g.family)?;
    let mut cfg = PipelineConfig::new(family, g.axis, g.profile, g.seed, g.out.clone());
    cfg.jobs = g.jobs;
    Ok(cfg)
}

fn with_run(mut cfg: PipelineConfig, run: &RunArgs) -> PipelineConfig {
    cfg.split_seeds = (0..run.seeds).collect();
    cfg.eval_episodes = run.episodes;
    cfg.rollouts = run.rollouts;
    cfg.q_label = run.q_label;
    cfg.noise_std = run.noise_std;
    if let Some(steps) = run.hz_steps {
        cfg.hz.total_steps = steps;
    }
    if let Some(steps) = run.rl_steps {
        cfg.td3.total_steps = steps;
        cfg.td3.exploration_std.duration = steps;
    }
    cfg
}

fn print_summary(report: &EvalReport) {
    let h = &report.header;
    println!(
        "{} {} axis, {} tasks ({} train / {} test), split seeds {:?}",
        h.family, h.axis, h.n_tasks, h.n_train, h.n_test, h.split_seeds
    );
    for s in &report.summary {
        println!(
            "{:<16} held-out {:>7.2} +- {:>6.2}  specialist {:>7.2}  ratio {:.3}",
            s.agent, s.heldout_mean, s.heldout_std, s.specialist_heldout_mean, s.normalized
        );
    }
    if !report.dominance_violations.is_empty() {
        println!(
            "{} train-task rows beat their specialist by more than the slack",
            report.dominance_violations.len()
        );
    }
}

fn load_agents(kind: AgentKind, ckpt: &Path, index: u64) -> Result<TrainedAgents> {
    let mut t = TrainedAgents {
        split_seed: index,
        hyper: Vec::new(),
        ctx: None,
        ctx_uvfa: None,
        maml: None,
    };
    match checkpoint_kind(ckpt)?.as_str() {
        "hyperzero" => {
            let trained = HzTrained::load(ckpt)?;
            if kind.variant() != Some(trained.net.config.variant) {
                bail!(
                    "{} holds variant {}, not agent {kind}",
                    ckpt.display(),
                    trained.net.config.variant
                );
            }
            t.hyper.push((kind, trained));
        }
        "baseline" => {
            let trained = CtxTrained::load(ckpt)?;
            match (kind, trained.kind) {
                (AgentKind::Ctx, BaselineKind::Ctx) => t.ctx = Some(trained),
                (AgentKind::CtxUvfa, BaselineKind::CtxUvfa) => t.ctx_uvfa = Some(trained),
                (AgentKind::MamlZeroShot | AgentKind::MamlFewShot, BaselineKind::Maml) => {
                    t.maml = Some(trained)
                }
                (k, b) => bail!(
                    "{} holds a {} baseline, not agent {k}",
                    ckpt.display(),
                    b.name()
                ),
            }
        }
        other => bail!("{} is a `{other}` checkpoint", ckpt.display()),
    }
    Ok(t)
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let cfg = pipeline(g)?;
    let default_data = || g.out.join(DATASET_FILE);
    match cli.command {
        Command::TrainRl { psi, mu } => {
            let close = |a: f64, b: Option<f64>| b.is_none_or(|b| (a - b).abs() < 1e-9);
            let picked: Vec<(usize, TaskParams)> = cfg
                .tasks()
                .into_iter()
                .enumerate()
                .filter(|(_, t)| close(t.psi, psi) && close(t.mu, mu))
                .collect();
            if picked.is_empty() {
                bail!("no grid task matches psi={psi:?} mu={mu:?}");
            }
            let solutions = if picked.len() == cfg.tasks().len() {
                train_specialists(&cfg)?
            } else {
                picked
                    .iter()
                    .map(|&(i, t)| train_specialist(&cfg, i, t))
                    .collect::<Result<_, _>>()?
            };
            for s in solutions {
                println!("{} {:.2}", s.task.key(), s.final_return());
            }
        }
        Command::Collect {
            checkpoints,
            episodes,
            q_label,
            noise_std,
            data,
        } => {
            let cfg = PipelineConfig {
                rollouts: episodes,
                q_label,
                noise_std,
                ..cfg
            };
            let dir = checkpoints.unwrap_or_else(|| g.out.join("rl"));
            let solutions = load_specialists(&cfg, &dir).context("run train-rl first")?;
            let dataset = collect_dataset(&cfg, &solutions)?;
            let path = data.unwrap_or_else(default_data);
            dataset.write(&path)?;
            println!(
                "{} transitions from {} tasks -> {}",
                dataset.transitions.len(),
                solutions.len(),
                path.display()
            );
        }
        Command::Split {
            data,
            index,
            output,
        } => {
            let path = data.unwrap_or_else(default_data);
            let mut dataset = Dataset::read(&path)?;
            dataset.apply_split(SplitSpec::new(derive_seed(g.seed, Stage::Split, index)))?;
            let out = output.unwrap_or(path);
            dataset.write(&out)?;
            for t in &dataset.header.tasks {
                println!("{} {:?}", t.task.key(), t.split);
            }
        }
        Command::TrainHz {
            data,
            variant,
            td_weight,
            steps,
            index,
            ckpt,
        } => {
            let dataset = Dataset::read(&data)?;
            let mut hz = HzConfig {
                variant,
                ..HzConfig::for_profile(g.profile)
            };
            if let Some(w) = td_weight {
                hz.td_weight = w;
            }
            if let Some(s) = steps {
                hz.total_steps = s;
            }
            let trained = hz_train(&dataset, &hz, derive_seed(g.seed, Stage::HyperTrain, index))?;
            let path = ckpt.unwrap_or_else(|| {
                g.out
                    .join(format!("{}.ckpt", AgentKind::from_variant(variant)))
            });
            trained.save(&path)?;
            if let Some(p) = trained.fit.curve.last() {
                println!(
                    "step {} val pred {:.6} td {:.6} -> {}",
                    p.step,
                    p.val.pred,
                    p.val.td,
                    path.display()
                );
            }
        }
        Command::TrainBaseline {
            kind,
            data,
            steps,
            index,
            ckpt,
        } => {
            let dataset = Dataset::read(&data)?;
            let mut arch = HzConfig::for_profile(g.profile);
            if let Some(s) = steps {
                arch.total_steps = s;
            }
            let trained = match kind {
                BaselineKind::Ctx => ctx_train(
                    &dataset,
                    &arch,
                    false,
                    derive_seed(g.seed, Stage::BaselineTrain, 2 * index),
                )?,
                BaselineKind::CtxUvfa => ctx_train(
                    &dataset,
                    &arch,
                    true,
                    derive_seed(g.seed, Stage::BaselineTrain, 2 * index + 1),
                )?,
                BaselineKind::Maml => maml_train(
                    &dataset,
                    &arch,
                    &cfg.maml,
                    derive_seed(g.seed, Stage::Maml, index),
                )?,
            };
            let path = ckpt.unwrap_or_else(|| g.out.join(format!("{}.ckpt", kind.name())));
            trained.save(&path)?;
            if let Some(p) = trained.fit.curve.last() {
                println!(
                    "step {} val pred {:.6} -> {}",
                    p.step,
                    p.val.pred,
                    path.display()
                );
            }
        }
        Command::Eval {
            data,
            ckpt,
            agent,
            episodes,
            index,
            checkpoints,
            format,
            report: report_path,
        } => {
            let dataset = Dataset::read(&data)?;
            let cfg = PipelineConfig {
                agents: vec![agent],
                eval_episodes: episodes,
                split_seeds: vec![index],
                family: dataset.header.family.clone(),
                ..cfg
            };
            let trained = load_agents(agent, &ckpt, index)?;
            let rows = evaluate_agents(&cfg, &dataset, &trained)?;
            let dir = checkpoints.unwrap_or_else(|| g.out.join("rl"));
            let specialists = specialist_rows(&cfg, &load_specialists(&cfg, &dir)?)?;
            let report = EvalReport::build(
                report_header(&cfg, &dataset, Some(&dataset)),
                specialists,
                rows,
            );
            let ext = if format == ReportFormat::Csv {
                "csv"
            } else {
                "json"
            };
            let path = report_path.unwrap_or_else(|| g.out.join(format!("eval-{agent}.{ext}")));
            emit_report(&report, format, &path)?;
            print_summary(&report);
        }
        Command::Oracle {
            psi,
            mu,
            v_grid,
            actions,
            horizon,
            checkpoint,
        } => {
            let task = TaskParams::new(psi, mu);
            let table = value_iteration_oracle(
                &cfg.family,
                task,
                v_grid,
                actions,
                horizon.unwrap_or(cfg.family.horizon),
            )?;
            let comparison = match checkpoint {
                Some(p) => Some(compare_critic(&Td3Solution::load(&p)?, &table)),
                None => None,
            };
            let out = serde_json::json!({ "oracle": table, "critic": comparison });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Report {
            input,
            format,
            output,
        } => {
            let report = read_report_json(&input.unwrap_or_else(|| g.out.join("report.json")))?;
            print_summary(&report);
            if let Some(path) = output {
                emit_report(&report, format.unwrap_or(ReportFormat::Json), &path)?;
            }
        }
        Command::Serve { config, bind } => {
            let mut config = ServeConfig::read(&config)?;
            if let Some(b) = bind {
                config.bind = b;
            }
            tokio::runtime::Runtime::new()?.block_on(serve(&config))?;
        }
        Command::All { run, agents } => {
            let cfg = PipelineConfig {
                agents,
                ..with_run(cfg, &run)
            };
            let report = run_all(&cfg)?;
            print_summary(&report);
        }
        Command::Ablate { run, variants } => {
            let report = run_ablation(&with_run(cfg, &run), &variants)?;
            print_summary(&report);
            if let Some(diff) = &report.header.variant_config_diff {
                println!("config fields that differ: {}", diff.join(", "));
            }
        }
        Command::Export { data, jsonl } => {
            Dataset::read(&data)?.export_jsonl(&jsonl)?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
