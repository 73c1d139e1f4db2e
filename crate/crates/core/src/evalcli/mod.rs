//! End-to-end pipeline, zero-shot evaluation, oracles and reports.

pub mod eval;
pub mod oracle;
pub mod pipeline;
pub mod report;

pub use eval::{
    episode_seed, evaluate, mean_std, Agent, AgentKind, TaskReturn, DEFAULT_EVAL_EPISODES,
};
pub use oracle::{compare_critic, value_iteration_oracle, CriticComparison, OracleTable};
pub use pipeline::{
    collect_dataset, evaluate_agents, load_specialists, report_header, rl_cache_name,
    rl_cache_path, run_all, run_experiment, specialist_rows, split_dataset, train_agents,
    train_specialist, train_specialists, write_reports, PipelineConfig, TrainedAgents,
    DATASET_FILE,
};
pub use report::{
    emit_report, read_report_json, read_rows_csv, AgentSummary, EvalReport, EvalRow, ReportFormat,
    ReportHeader, SeedSummary, SpecialistRow,
};

use thiserror::Error;

use crate::datastore::DataError;
use crate::envfam::{EnvError, TaskParams};
use crate::hyperzero::HzError;
use crate::solver::SolverError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Hz(#[from] HzError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("no specialist for task {0:?}")]
    NoSpecialist(TaskParams),
    #[error("no stored transitions for task {0:?}")]
    NoSupport(TaskParams),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Pipeline failure tagged with the stage that raised it.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("train-rl {task}: {source}")]
    Solver { task: String, source: SolverError },
    #[error("collect: {0}")]
    Collect(DataError),
    #[error("split: {0}")]
    Split(DataError),
    #[error("train {agent} (split seed {seed}): {source}")]
    Train {
        agent: String,
        seed: u64,
        source: HzError,
    },
    #[error("eval {agent} (split seed {seed}): {source}")]
    Eval {
        agent: String,
        seed: u64,
        source: EvalError,
    },
    #[error("report: {0}")]
    Report(EvalError),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
