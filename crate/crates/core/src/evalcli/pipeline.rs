use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, Agent, AgentKind, DEFAULT_EVAL_EPISODES};
use super::report::{
    emit_report, emit_specialists, EvalReport, EvalRow, ReportFormat, ReportHeader, SpecialistRow,
};
use super::PipelineError;
use crate::baselines::{ctx_train, maml_train, CtxTrained, MamlConfig};
use crate::datastore::{collect, Dataset, Split, SplitSpec, DEFAULT_EPISODES};
use crate::envfam::{Axis, FamilySpec, TaskParams};
use crate::hyperzero::{hz_train, HzConfig, HzTrained};
use crate::seeds::{derive_seed, Stage};
use crate::solver::{td3_train, Profile, QLabelRule, Td3Config, Td3Solution};

/// Everything a pipeline run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub family: FamilySpec,
    pub axis: Axis,
    pub profile: Profile,
    pub seed: u64,
    /// One random train/test split per entry.
    pub split_seeds: Vec<u64>,
    pub agents: Vec<AgentKind>,
    pub jobs: usize,
    pub out: PathBuf,
    pub eval_episodes: usize,
    pub rollouts: usize,
    pub q_label: QLabelRule,
    pub noise_std: f64,
    pub td3: Td3Config,
    pub hz: HzConfig,
    pub maml: MamlConfig,
}

impl PipelineConfig {
    pub fn new(family: FamilySpec, axis: Axis, profile: Profile, seed: u64, out: PathBuf) -> Self {
        Self {
            family,
            axis,
            profile,
            seed,
            split_seeds: (0..5).collect(),
            agents: AgentKind::DEFAULT.to_vec(),
            jobs: 1,
            out,
            eval_episodes: DEFAULT_EVAL_EPISODES,
            rollouts: DEFAULT_EPISODES,
            q_label: QLabelRule::Min,
            noise_std: 0.0,
            td3: Td3Config::for_profile(profile),
            hz: HzConfig::for_profile(profile),
            maml: MamlConfig::default(),
        }
    }

    pub fn tasks(&self) -> Vec<TaskParams> {
        self.family.task_grid(self.axis, false)
    }

    fn pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn seed_dir(&self, split_seed: u64) -> PathBuf {
        self.out.join(format!("seed{split_seed}"))
    }
}

/// Dataset file written by `run_experiment` inside the output directory.
pub const DATASET_FILE: &str = "dataset.hzd";

/// File name of a task's solver checkpoint. The key leaves out split seeds:
/// every split reuses the same specialists.
pub fn rl_cache_name(cfg: &PipelineConfig, task: TaskParams) -> String {
    format!("{}-{}-{}.td3", cfg.family.name, cfg.profile, task.key())
}

pub fn rl_cache_path(cfg: &PipelineConfig, task: TaskParams) -> PathBuf {
    cfg.out.join("rl").join(rl_cache_name(cfg, task))
}

fn load_cached(
    path: &Path,
    cfg: &PipelineConfig,
    task: TaskParams,
    seed: u64,
) -> Option<Td3Solution> {
    let s = Td3Solution::load(path).ok()?;
    (s.task == task && s.seed == seed && s.config == cfg.td3 && s.family == cfg.family).then_some(s)
}

/// Solve grid task `index`, or reuse its valid cache entry.
pub fn train_specialist(
    cfg: &PipelineConfig,
    index: usize,
    task: TaskParams,
) -> Result<Td3Solution, PipelineError> {
    let seed = derive_seed(cfg.seed, Stage::Solver, index as u64);
    let path = rl_cache_path(cfg, task);
    if let Some(s) = load_cached(&path, cfg, task, seed) {
        return Ok(s);
    }
    let tag = |source| PipelineError::Solver {
        task: task.key(),
        source,
    };
    let s = td3_train(&cfg.family.instance(task), &cfg.td3, seed).map_err(tag)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    s.save(&path).map_err(tag)?;
    info!("train-rl {} return {:.1}", task.key(), s.final_return());
    Ok(s)
}

/// One solver run per task, in task-grid order.
pub fn train_specialists(cfg: &PipelineConfig) -> Result<Vec<Td3Solution>, PipelineError> {
    let tasks = cfg.tasks();
    cfg.pool()?.install(|| {
        tasks
            .par_iter()
            .enumerate()
            .map(|(i, &task)| train_specialist(cfg, i, task))
            .collect()
    })
}

/// Previously trained specialists for the whole grid, read from `dir`.
pub fn load_specialists(
    cfg: &PipelineConfig,
    dir: &Path,
) -> Result<Vec<Td3Solution>, PipelineError> {
    cfg.tasks()
        .into_iter()
        .map(|task| {
            Td3Solution::load(&dir.join(rl_cache_name(cfg, task))).map_err(|source| {
                PipelineError::Solver {
                    task: task.key(),
                    source,
                }
            })
        })
        .collect()
}

/// Near-optimal transitions from every specialist, all tasks unassigned.
pub fn collect_dataset(
    cfg: &PipelineConfig,
    solutions: &[Td3Solution],
) -> Result<Dataset, PipelineError> {
    let per_task = solutions
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let seed = derive_seed(cfg.seed, Stage::Collect, i as u64);
            let rows = collect(
                &cfg.family.instance(s.task),
                s,
                cfg.rollouts,
                seed,
                cfg.q_label,
                cfg.noise_std,
            )
            .map_err(PipelineError::Collect)?;
            Ok((s.task, s.final_return(), rows))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(Dataset::new(
        cfg.family.clone(),
        cfg.profile,
        cfg.rollouts,
        cfg.q_label,
        cfg.noise_std,
        per_task,
    ))
}

/// The dataset with the train/test split of `split_seed` applied.
pub fn split_dataset(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    split_seed: u64,
) -> Result<Dataset, PipelineError> {
    let mut d = dataset.clone();
    d.apply_split(SplitSpec::new(derive_seed(
        cfg.seed,
        Stage::Split,
        split_seed,
    )))
    .map_err(PipelineError::Split)?;
    Ok(d)
}

/// Agents trained on one split.
#[derive(Debug, Clone)]
pub struct TrainedAgents {
    pub split_seed: u64,
    pub hyper: Vec<(AgentKind, HzTrained)>,
    pub ctx: Option<CtxTrained>,
    pub ctx_uvfa: Option<CtxTrained>,
    pub maml: Option<CtxTrained>,
}

impl TrainedAgents {
    fn agent<'a>(
        &'a self,
        kind: AgentKind,
        dataset: &'a Dataset,
        support_seed: u64,
    ) -> Option<Agent<'a>> {
        match kind {
            AgentKind::Ctx => self.ctx.as_ref().map(Agent::Ctx),
            AgentKind::CtxUvfa => self.ctx_uvfa.as_ref().map(Agent::Ctx),
            AgentKind::MamlZeroShot => self.maml.as_ref().map(Agent::Ctx),
            AgentKind::MamlFewShot => self.maml.as_ref().map(|trained| Agent::MamlFewShot {
                trained,
                support: dataset,
                seed: support_seed,
            }),
            _ => self
                .hyper
                .iter()
                .find(|(k, _)| *k == kind)
                .map(|(_, t)| Agent::Hyper(t)),
        }
    }

    /// Write every checkpoint under `dir` as `<agent>.ckpt` (`maml.ckpt` for both MAML modes).
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir)?;
        let tag = |agent: &str, source| PipelineError::Train {
            agent: agent.into(),
            seed: self.split_seed,
            source,
        };
        for (kind, t) in &self.hyper {
            t.save(&dir.join(format!("{kind}.ckpt")))
                .map_err(|e| tag(kind.name(), e))?;
        }
        for (name, t) in [
            ("ctx", &self.ctx),
            ("ctx-uvfa", &self.ctx_uvfa),
            ("maml", &self.maml),
        ] {
            if let Some(t) = t {
                t.save(&dir.join(format!("{name}.ckpt")))
                    .map_err(|e| tag(name, e))?;
            }
        }
        Ok(())
    }
}

/// Train the requested agents on a split dataset. Every hypernetwork
/// variant uses the same seed, so variants differ only in heads and losses.
pub fn train_agents(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    split_seed: u64,
) -> Result<TrainedAgents, PipelineError> {
    let tag = |agent: &str| {
        let agent = agent.to_string();
        move |source| PipelineError::Train {
            agent,
            seed: split_seed,
            source,
        }
    };
    let mut out = TrainedAgents {
        split_seed,
        hyper: Vec::new(),
        ctx: None,
        ctx_uvfa: None,
        maml: None,
    };
    for &kind in &cfg.agents {
        if let Some(variant) = kind.variant() {
            let config = HzConfig {
                variant,
                ..cfg.hz.clone()
            };
            let seed = derive_seed(cfg.seed, Stage::HyperTrain, split_seed);
            let t = hz_train(dataset, &config, seed).map_err(tag(kind.name()))?;
            out.hyper.push((kind, t));
        }
        match kind {
            AgentKind::Ctx => {
                let seed = derive_seed(cfg.seed, Stage::BaselineTrain, 2 * split_seed);
                out.ctx = Some(ctx_train(dataset, &cfg.hz, false, seed).map_err(tag("ctx"))?);
            }
            AgentKind::CtxUvfa => {
                let seed = derive_seed(cfg.seed, Stage::BaselineTrain, 2 * split_seed + 1);
                out.ctx_uvfa =
                    Some(ctx_train(dataset, &cfg.hz, true, seed).map_err(tag("ctx-uvfa"))?);
            }
            AgentKind::MamlZeroShot | AgentKind::MamlFewShot if out.maml.is_none() => {
                let seed = derive_seed(cfg.seed, Stage::Maml, split_seed);
                out.maml =
                    Some(maml_train(dataset, &cfg.hz, &cfg.maml, seed).map_err(tag("maml"))?);
            }
            _ => {}
        }
        info!("split {split_seed}: trained {kind}");
    }
    Ok(out)
}

/// Evaluate every requested agent on every task of `dataset`.
pub fn evaluate_agents(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    trained: &TrainedAgents,
) -> Result<Vec<EvalRow>, PipelineError> {
    let eval_seed = derive_seed(cfg.seed, Stage::Evaluate, 0);
    let support_seed = derive_seed(cfg.seed, Stage::Evaluate, 1 + trained.split_seed);
    let tasks: Vec<(TaskParams, Split)> = dataset
        .header
        .tasks
        .iter()
        .map(|t| (t.task, t.split))
        .collect();
    let task_list: Vec<TaskParams> = tasks.iter().map(|t| t.0).collect();
    let mut rows = Vec::new();
    for &kind in &cfg.agents {
        let tag = |source| PipelineError::Eval {
            agent: kind.name().into(),
            seed: trained.split_seed,
            source,
        };
        let agent = trained
            .agent(kind, dataset, support_seed)
            .ok_or_else(|| PipelineError::Config(format!("agent {kind} was not trained")))?;
        let returns = evaluate(
            &agent,
            &cfg.family,
            &task_list,
            cfg.eval_episodes,
            eval_seed,
        )
        .map_err(tag)?;
        for (r, (_, split)) in returns.iter().zip(&tasks) {
            rows.push(EvalRow {
                seed: trained.split_seed,
                psi: r.task.psi,
                mu: r.task.mu,
                split: *split,
                agent: kind.name().into(),
                mean_return: r.mean,
                std_return: r.std,
            });
        }
    }
    Ok(rows)
}

/// Specialist returns under the shared evaluation protocol.
pub fn specialist_rows(
    cfg: &PipelineConfig,
    solutions: &[Td3Solution],
) -> Result<Vec<SpecialistRow>, PipelineError> {
    let eval_seed = derive_seed(cfg.seed, Stage::Evaluate, 0);
    let tasks: Vec<TaskParams> = solutions.iter().map(|s| s.task).collect();
    let returns = evaluate(
        &Agent::Specialists(solutions),
        &cfg.family,
        &tasks,
        cfg.eval_episodes,
        eval_seed,
    )
    .map_err(|source| PipelineError::Eval {
        agent: "specialist".into(),
        seed: 0,
        source,
    })?;
    Ok(solutions
        .iter()
        .zip(returns)
        .map(|(s, r)| SpecialistRow {
            psi: s.task.psi,
            mu: s.task.mu,
            training_return: s.final_return(),
            eval_return: r.mean,
        })
        .collect())
}

pub fn report_header(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    first_split: Option<&Dataset>,
) -> ReportHeader {
    let count = |split| first_split.map_or(0, |d| d.header.tasks_with(split).len());
    let has_maml = cfg
        .agents
        .iter()
        .any(|k| matches!(k, AgentKind::MamlZeroShot | AgentKind::MamlFewShot));
    ReportHeader {
        family: cfg.family.name.clone(),
        spec_hash: cfg.family.spec_hash(),
        axis: cfg.axis,
        profile: cfg.profile,
        base_seed: cfg.seed,
        split_seeds: cfg.split_seeds.clone(),
        n_tasks: dataset.header.tasks.len(),
        n_train: count(Split::Train),
        n_test: count(Split::Test),
        eval_episodes: cfg.eval_episodes,
        rollouts_per_task: cfg.rollouts,
        q_label: cfg.q_label,
        noise_std: cfg.noise_std,
        agents: cfg.agents.iter().map(|k| k.name().to_string()).collect(),
        td3: cfg.td3.clone(),
        hz: cfg.hz.clone(),
        maml: has_maml.then_some(cfg.maml),
        variant_config_diff: None,
    }
}

/// Solver, collection, then per split seed: split, train, evaluate.
pub fn run_experiment(cfg: &PipelineConfig) -> Result<EvalReport, PipelineError> {
    if cfg.split_seeds.is_empty() || cfg.agents.is_empty() || cfg.eval_episodes == 0 {
        return Err(PipelineError::Config(
            "need at least one split seed, agent and eval episode".into(),
        ));
    }
    let solutions = train_specialists(cfg)?;
    let dataset = collect_dataset(cfg, &solutions)?;
    dataset
        .write(&cfg.out.join(DATASET_FILE))
        .map_err(PipelineError::Collect)?;
    let specialists = specialist_rows(cfg, &solutions)?;
    let per_seed: Vec<(Dataset, Vec<EvalRow>)> = cfg.pool()?.install(|| {
        cfg.split_seeds
            .par_iter()
            .map(|&k| {
                let split = split_dataset(cfg, &dataset, k)?;
                let trained = train_agents(cfg, &split, k)?;
                trained.save(&cfg.seed_dir(k))?;
                let rows = evaluate_agents(cfg, &split, &trained)?;
                Ok((split, rows))
            })
            .collect::<Result<_, PipelineError>>()
    })?;
    let header = report_header(cfg, &dataset, per_seed.first().map(|p| &p.0));
    let rows = per_seed.into_iter().flat_map(|(_, r)| r).collect();
    Ok(EvalReport::build(header, specialists, rows))
}

/// Write `report.json`, `report.csv` and `specialists.csv` under `out`.
pub fn write_reports(report: &EvalReport, out: &Path) -> Result<(), PipelineError> {
    emit_report(report, ReportFormat::Json, &out.join("report.json"))
        .map_err(PipelineError::Report)?;
    emit_report(report, ReportFormat::Csv, &out.join("report.csv"))
        .map_err(PipelineError::Report)?;
    emit_specialists(&report.specialists, &out.join("specialists.csv"))
        .map_err(PipelineError::Report)?;
    Ok(())
}

/// The full pipeline with reports on disk.
pub fn run_all(cfg: &PipelineConfig) -> Result<EvalReport, PipelineError> {
    let report = run_experiment(cfg)?;
    write_reports(&report, &cfg.out)?;
    Ok(report)
}
