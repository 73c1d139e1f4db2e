use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::mean_std;
use super::EvalError;
use crate::baselines::MamlConfig;
use crate::datastore::Split;
use crate::envfam::{Axis, TaskParams};
use crate::hyperzero::HzConfig;
use crate::solver::{Profile, QLabelRule, Td3Config};

/// Slack on the specialist-dominance check, in return units.
pub const DOMINANCE_SLACK: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub family: String,
    pub spec_hash: String,
    pub axis: Axis,
    pub profile: Profile,
    pub base_seed: u64,
    pub split_seeds: Vec<u64>,
    pub n_tasks: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub eval_episodes: usize,
    pub rollouts_per_task: usize,
    pub q_label: QLabelRule,
    pub noise_std: f64,
    pub agents: Vec<String>,
    pub td3: Td3Config,
    pub hz: HzConfig,
    pub maml: Option<MamlConfig>,
    /// Config fields that differ between compared hypernetwork variants.
    pub variant_config_diff: Option<Vec<String>>,
}

/// One (seed, task, agent) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub seed: u64,
    pub psi: f64,
    pub mu: f64,
    pub split: Split,
    pub agent: String,
    pub mean_return: f64,
    pub std_return: f64,
}

impl EvalRow {
    pub fn task(&self) -> TaskParams {
        TaskParams::new(self.psi, self.mu)
    }
}

/// Per-task return of the task's own solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialistRow {
    pub psi: f64,
    pub mu: f64,
    /// Last evaluation during solver training.
    pub training_return: f64,
    /// Same protocol and episode seeds as the other agents.
    pub eval_return: f64,
}

/// Mean and std of per-seed returns for one (task, agent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub psi: f64,
    pub mu: f64,
    pub agent: String,
    pub mean_return: f64,
    pub std_return: f64,
    pub n_seeds: usize,
}

/// Held-out performance of one agent under one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub agent: String,
    pub heldout_mean: f64,
    pub specialist_heldout_mean: f64,
    /// `heldout_mean / specialist_heldout_mean`.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub agent: String,
    pub heldout_mean: f64,
    pub heldout_std: f64,
    pub specialist_heldout_mean: f64,
    pub normalized: f64,
}

/// A train task where a zero-shot agent beat its specialist by more than the slack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceViolation {
    pub seed: u64,
    pub psi: f64,
    pub mu: f64,
    pub agent: String,
    pub agent_return: f64,
    pub specialist_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub header: ReportHeader,
    pub specialists: Vec<SpecialistRow>,
    pub rows: Vec<EvalRow>,
    pub aggregate: Vec<AggregateRow>,
    pub per_seed: Vec<SeedSummary>,
    pub summary: Vec<AgentSummary>,
    pub dominance_violations: Vec<DominanceViolation>,
}

fn task_key(psi: f64, mu: f64) -> (u64, u64) {
    (psi.to_bits(), mu.to_bits())
}

impl EvalReport {
    /// Derive aggregates from rows. Row order defines every output order.
    pub fn build(
        header: ReportHeader,
        specialists: Vec<SpecialistRow>,
        rows: Vec<EvalRow>,
    ) -> Self {
        let spec: BTreeMap<(u64, u64), f64> = specialists
            .iter()
            .map(|s| (task_key(s.psi, s.mu), s.eval_return))
            .collect();
        let agents = header.agents.clone();

        let mut aggregate = Vec::new();
        for s in &specialists {
            for agent in &agents {
                let per_seed: Vec<f64> = rows
                    .iter()
                    .filter(|r| &r.agent == agent && r.psi == s.psi && r.mu == s.mu)
                    .map(|r| r.mean_return)
                    .collect();
                if per_seed.is_empty() {
                    continue;
                }
                let (m, sd) = mean_std(&per_seed);
                aggregate.push(AggregateRow {
                    psi: s.psi,
                    mu: s.mu,
                    agent: agent.clone(),
                    mean_return: m,
                    std_return: sd,
                    n_seeds: per_seed.len(),
                });
            }
        }

        let mut per_seed = Vec::new();
        for &seed in &header.split_seeds {
            for agent in &agents {
                let test: Vec<&EvalRow> = rows
                    .iter()
                    .filter(|r| r.seed == seed && &r.agent == agent && r.split == Split::Test)
                    .collect();
                if test.is_empty() {
                    continue;
                }
                let heldout_mean =
                    test.iter().map(|r| r.mean_return).sum::<f64>() / test.len() as f64;
                let specialist_heldout_mean = test
                    .iter()
                    .map(|r| spec[&task_key(r.psi, r.mu)])
                    .sum::<f64>()
                    / test.len() as f64;
                per_seed.push(SeedSummary {
                    seed,
                    agent: agent.clone(),
                    heldout_mean,
                    specialist_heldout_mean,
                    normalized: heldout_mean / specialist_heldout_mean,
                });
            }
        }

        let summary = agents
            .iter()
            .filter_map(|agent| {
                let mine: Vec<&SeedSummary> =
                    per_seed.iter().filter(|s| &s.agent == agent).collect();
                if mine.is_empty() {
                    return None;
                }
                let (m, sd) = mean_std(&mine.iter().map(|s| s.heldout_mean).collect::<Vec<_>>());
                let sm =
                    mine.iter().map(|s| s.specialist_heldout_mean).sum::<f64>() / mine.len() as f64;
                Some(AgentSummary {
                    agent: agent.clone(),
                    heldout_mean: m,
                    heldout_std: sd,
                    specialist_heldout_mean: sm,
                    normalized: m / sm,
                })
            })
            .collect();

        let dominance_violations = rows
            .iter()
            .filter(|r| r.split == Split::Train)
            .filter_map(|r| {
                let s = spec[&task_key(r.psi, r.mu)];
                (s < r.mean_return - DOMINANCE_SLACK).then(|| DominanceViolation {
                    seed: r.seed,
                    psi: r.psi,
                    mu: r.mu,
                    agent: r.agent.clone(),
                    agent_return: r.mean_return,
                    specialist_return: s,
                })
            })
            .collect();

        Self {
            header,
            specialists,
            rows,
            aggregate,
            per_seed,
            summary,
            dominance_violations,
        }
    }

    pub fn seed_summary(&self, seed: u64, agent: &str) -> Option<&SeedSummary> {
        self.per_seed
            .iter()
            .find(|s| s.seed == seed && s.agent == agent)
    }

    pub fn agent_summary(&self, agent: &str) -> Option<&AgentSummary> {
        self.summary.iter().find(|s| s.agent == agent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!(
                "unknown report format `{other}` (expected csv or json)"
            )),
        }
    }
}

/// Write the report. CSV carries the per-(seed, task, agent) rows; JSON
/// carries everything.
pub fn emit_report(
    report: &EvalReport,
    format: ReportFormat,
    path: &Path,
) -> Result<(), EvalError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let bytes = match format {
        ReportFormat::Json => {
            let mut v = serde_json::to_vec_pretty(report)?;
            v.push(b'\n');
            v
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in &report.rows {
                w.serialize(row)?;
            }
            w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?
        }
    };
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_report_json(path: &Path) -> Result<EvalReport, EvalError> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<EvalRow>, EvalError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<EvalRow>, _>>()?)
}

/// Write the specialist table as CSV.
pub fn emit_specialists(rows: &[SpecialistRow], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
