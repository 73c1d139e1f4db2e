//! Labeled near-optimal rollouts and the train/test task split.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{self, ContainerError};
use crate::envfam::{EnvError, FamilySpec, MdpInstance, TaskParams};
use crate::solver::{qstar_label, Profile, QLabelRule, Td3Solution};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_EPISODES: usize = 10;
pub const TRAIN_FRACTION: f64 = 0.85;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("need at least 2 tasks to split, got {0}")]
    TooFewTasks(usize),
    #[error("invalid split fraction {0}")]
    BadFraction(f64),
    #[error("dataset format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub psi: f64,
    pub mu: f64,
    /// Agent observation before the step.
    pub s: Vec<f64>,
    pub a_star: Vec<f64>,
    pub s_next: Vec<f64>,
    pub r: f64,
    pub q_star: f64,
    pub episode_id: u32,
    pub step_index: u32,
}

impl Transition {
    pub fn task(&self) -> TaskParams {
        TaskParams::new(self.psi, self.mu)
    }

    fn record_width(obs_dim: usize, action_dim: usize) -> usize {
        2 * obs_dim + action_dim + 6
    }

    fn encode(&self, out: &mut Vec<f64>) {
        out.push(self.psi);
        out.push(self.mu);
        out.extend_from_slice(&self.s);
        out.extend_from_slice(&self.a_star);
        out.extend_from_slice(&self.s_next);
        out.push(self.r);
        out.push(self.q_star);
        out.push(f64::from(self.episode_id));
        out.push(f64::from(self.step_index));
    }

    fn decode(rec: &[f64], obs_dim: usize, action_dim: usize) -> Self {
        let mut i = 2;
        let mut take = |n: usize| {
            let v = rec[i..i + n].to_vec();
            i += n;
            v
        };
        let s = take(obs_dim);
        let a_star = take(action_dim);
        let s_next = take(obs_dim);
        let tail = take(4);
        Self {
            psi: rec[0],
            mu: rec[1],
            s,
            a_star,
            s_next,
            r: tail[0],
            q_star: tail[1],
            episode_id: tail[2] as u32,
            step_index: tail[3] as u32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    /// Not yet assigned by [`split_tasks`].
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub task: TaskParams,
    pub split: Split,
    pub n_transitions: usize,
    /// Final evaluation return of the task's solver run.
    pub specialist_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub family: FamilySpec,
    pub spec_hash: String,
    pub profile: Profile,
    pub rollouts_per_task: usize,
    pub q_label: QLabelRule,
    pub noise_std: f64,
    pub split_seed: Option<u64>,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub tasks: Vec<TaskEntry>,
}

impl DatasetHeader {
    pub fn tasks_with(&self, split: Split) -> Vec<TaskParams> {
        self.tasks
            .iter()
            .filter(|t| t.split == split)
            .map(|t| t.task)
            .collect()
    }
}

/// In-memory dataset; transitions are grouped by task in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub transitions: Vec<Transition>,
    train_index: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            train_fraction: TRAIN_FRACTION,
            seed,
        }
    }
}

/// Seeded shuffle; the first `ceil(fraction·N)` tasks train, the rest test.
/// Both halves are returned in input order.
pub fn split_tasks(
    tasks: &[TaskParams],
    spec: SplitSpec,
) -> Result<(Vec<TaskParams>, Vec<TaskParams>), DataError> {
    if tasks.len() < 2 {
        return Err(DataError::TooFewTasks(tasks.len()));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(DataError::BadFraction(spec.train_fraction));
    }
    let n_train = ((spec.train_fraction * tasks.len() as f64) - 1e-9).ceil() as usize;
    let n_train = n_train.clamp(1, tasks.len() - 1);
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut is_train = vec![false; tasks.len()];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let pick = |want: bool| {
        tasks
            .iter()
            .zip(&is_train)
            .filter(|(_, &t)| t == want)
            .map(|(p, _)| *p)
            .collect()
    };
    Ok((pick(true), pick(false)))
}

/// Noiseless (by default) rollouts of a solved task labeled with `q*`.
pub fn collect(
    instance: &MdpInstance,
    solution: &Td3Solution,
    n_episodes: usize,
    seed: u64,
    q_label: QLabelRule,
    noise_std: f64,
) -> Result<Vec<Transition>, DataError> {
    let fam = &instance.family;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0005_EED0_FA17);
    let noise =
        Normal::new(0.0, noise_std.max(0.0)).map_err(|e| DataError::Malformed(e.to_string()))?;
    let bound = fam.action_bound;
    let mut out = Vec::with_capacity(n_episodes * fam.horizon);
    for ep in 0..n_episodes {
        let mut state = instance.reset(
            seed.wrapping_add(ep as u64)
                .wrapping_mul(0x2545_F491_4F6C_DD1D),
        );
        for t in 0..fam.horizon {
            let obs = fam.observe(&state);
            let mut a = solution.actor.act(&obs);
            if noise_std > 0.0 {
                for x in a.iter_mut() {
                    *x = (*x + noise.sample(&mut noise_rng)).clamp(-bound, bound);
                }
            }
            let step = instance.step(&state, &a)?;
            let s_next = fam.observe(&step.next_state);
            out.push(Transition {
                psi: instance.params.psi,
                mu: instance.params.mu,
                q_star: qstar_label(&solution.critics, &obs, &a, q_label),
                s: obs,
                a_star: a,
                s_next,
                r: step.reward,
                episode_id: ep as u32,
                step_index: t as u32,
            });
            state = step.next_state;
        }
    }
    Ok(out)
}

impl Dataset {
    /// Build from per-task transitions; every task starts unassigned.
    pub fn new(
        family: FamilySpec,
        profile: Profile,
        rollouts_per_task: usize,
        q_label: QLabelRule,
        noise_std: f64,
        per_task: Vec<(TaskParams, f64, Vec<Transition>)>,
    ) -> Self {
        let mut tasks = Vec::with_capacity(per_task.len());
        let mut transitions = Vec::new();
        for (task, specialist_return, trs) in per_task {
            tasks.push(TaskEntry {
                task,
                split: Split::Unassigned,
                n_transitions: trs.len(),
                specialist_return,
            });
            transitions.extend(trs);
        }
        let header = DatasetHeader {
            format_version: FORMAT_VERSION,
            spec_hash: family.spec_hash(),
            obs_dim: family.obs_dim(),
            action_dim: family.action_dim,
            family,
            profile,
            rollouts_per_task,
            q_label,
            noise_std,
            split_seed: None,
            tasks,
        };
        let mut d = Self {
            header,
            transitions,
            train_index: Vec::new(),
        };
        d.reindex();
        d
    }

    fn reindex(&mut self) {
        let mut offset = 0;
        self.train_index.clear();
        for t in &self.header.tasks {
            if t.split == Split::Train {
                self.train_index.extend(offset..offset + t.n_transitions);
            }
            offset += t.n_transitions;
        }
    }

    /// Label every task train or test with a seeded split.
    pub fn apply_split(&mut self, spec: SplitSpec) -> Result<(), DataError> {
        let all: Vec<TaskParams> = self.header.tasks.iter().map(|t| t.task).collect();
        let (train, _) = split_tasks(&all, spec)?;
        for t in &mut self.header.tasks {
            t.split = if train.contains(&t.task) {
                Split::Train
            } else {
                Split::Test
            };
        }
        self.header.split_seed = Some(spec.seed);
        self.reindex();
        Ok(())
    }

    /// Copy of the dataset with only the given tasks labeled train and the rest test.
    pub fn with_train_tasks(&self, train: &[TaskParams]) -> Self {
        let mut d = self.clone();
        for t in &mut d.header.tasks {
            t.split = if train.contains(&t.task) {
                Split::Train
            } else {
                Split::Test
            };
        }
        d.reindex();
        d
    }

    pub fn task_range(&self, i: usize) -> std::ops::Range<usize> {
        let start: usize = self.header.tasks[..i].iter().map(|t| t.n_transitions).sum();
        start..start + self.header.tasks[i].n_transitions
    }

    pub fn task_transitions(&self, task: TaskParams) -> Option<&[Transition]> {
        let i = self.header.tasks.iter().position(|t| t.task == task)?;
        Some(&self.transitions[self.task_range(i)])
    }

    /// Number of transitions belonging to train tasks.
    pub fn train_len(&self) -> usize {
        self.train_index.len()
    }

    /// Uniform with replacement over train-task transitions.
    pub fn minibatch<'a>(&'a self, batch_size: usize, rng: &mut impl Rng) -> Vec<&'a Transition> {
        assert!(
            !self.train_index.is_empty(),
            "dataset has no training transitions"
        );
        (0..batch_size)
            .map(|_| {
                &self.transitions[self.train_index[rng.random_range(0..self.train_index.len())]]
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let (od, ad) = (self.header.obs_dim, self.header.action_dim);
        let mut blocks = Vec::with_capacity(self.header.tasks.len());
        for i in 0..self.header.tasks.len() {
            let mut block = Vec::with_capacity(
                self.header.tasks[i].n_transitions * Transition::record_width(od, ad),
            );
            for tr in &self.transitions[self.task_range(i)] {
                tr.encode(&mut block);
            }
            blocks.push(block);
        }
        let refs: Vec<&[f64]> = blocks.iter().map(Vec::as_slice).collect();
        container::write(path, &self.header, &refs)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let (header, blocks): (DatasetHeader, _) = container::read(path)?;
        check_version(&header)?;
        if blocks.len() != header.tasks.len() {
            return Err(DataError::Malformed(format!(
                "{} blocks for {} tasks",
                blocks.len(),
                header.tasks.len()
            )));
        }
        let width = Transition::record_width(header.obs_dim, header.action_dim);
        let mut transitions = Vec::new();
        for (entry, block) in header.tasks.iter().zip(&blocks) {
            if block.len() != entry.n_transitions * width {
                return Err(DataError::Malformed(format!(
                    "task {} has a short block",
                    entry.task.key()
                )));
            }
            transitions.extend(
                block
                    .chunks_exact(width)
                    .map(|r| Transition::decode(r, header.obs_dim, header.action_dim)),
            );
        }
        let mut d = Self {
            header,
            transitions,
            train_index: Vec::new(),
        };
        d.reindex();
        Ok(d)
    }

    /// Debug/UI export: a header line followed by one transition per line.
    pub fn export_jsonl(&self, path: &Path) -> Result<(), DataError> {
        let io = |source| DataError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        let header = serde_json::json!({ "header": &self.header });
        writeln!(w, "{header}").map_err(io)?;
        for tr in &self.transitions {
            let line =
                serde_json::to_string(tr).map_err(|e| DataError::Malformed(e.to_string()))?;
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Per-task count of transitions, keyed by task key.
    pub fn task_counts(&self) -> HashMap<String, usize> {
        self.header
            .tasks
            .iter()
            .map(|t| (t.task.key(), t.n_transitions))
            .collect()
    }
}

fn check_version(h: &DatasetHeader) -> Result<(), DataError> {
    if h.format_version != FORMAT_VERSION {
        return Err(DataError::Version {
            found: h.format_version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

/// Read only the header (task list, splits, provenance).
pub fn read_header(path: &Path) -> Result<DatasetHeader, DataError> {
    let h: DatasetHeader = container::read_header(path)?;
    check_version(&h)?;
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envfam::make_family;

    fn tasks(n: usize) -> Vec<TaskParams> {
        (0..n).map(|i| TaskParams::new(i as f64, 1.0)).collect()
    }

    #[test]
    fn split_counts_and_disjointness() {
        let t = tasks(40);
        let (train, test) = split_tasks(&t, SplitSpec::new(3)).unwrap();
        assert_eq!((train.len(), test.len()), (34, 6));
        assert!(train.iter().all(|p| !test.contains(p)));
        assert_eq!(split_tasks(&t, SplitSpec::new(3)).unwrap().0, train);
        assert_ne!(split_tasks(&t, SplitSpec::new(4)).unwrap().0, train);
        let (train41, _) = split_tasks(&tasks(41), SplitSpec::new(0)).unwrap();
        assert_eq!(train41.len(), 35);
    }

    #[test]
    fn split_rejects_tiny_inputs() {
        assert!(matches!(
            split_tasks(&tasks(1), SplitSpec::new(0)),
            Err(DataError::TooFewTasks(1))
        ));
    }

    #[test]
    fn record_round_trip() {
        let tr = Transition {
            psi: 0.1,
            mu: 1.0 / 3.0,
            s: vec![f64::MIN_POSITIVE],
            a_star: vec![-0.7],
            s_next: vec![1e300],
            r: 0.5,
            q_star: 88.25,
            episode_id: 9,
            step_index: 199,
        };
        let mut rec = Vec::new();
        tr.encode(&mut rec);
        assert_eq!(rec.len(), Transition::record_width(1, 1));
        assert_eq!(Transition::decode(&rec, 1, 1), tr);
    }

    #[test]
    fn dataset_tracks_train_rows() {
        let fam = make_family("pointmass1d").unwrap();
        let mk = |psi: f64, n: usize| {
            let trs = (0..n)
                .map(|i| Transition {
                    psi,
                    mu: 1.0,
                    s: vec![0.0],
                    a_star: vec![0.0],
                    s_next: vec![0.0],
                    r: 1.0,
                    q_star: 1.0,
                    episode_id: 0,
                    step_index: i as u32,
                })
                .collect();
            (TaskParams::new(psi, 1.0), 100.0, trs)
        };
        let d = Dataset::new(
            fam,
            Profile::Desk,
            1,
            QLabelRule::Min,
            0.0,
            vec![mk(1.0, 3), mk(2.0, 5)],
        );
        assert_eq!(d.train_len(), 0);
        let d = d.with_train_tasks(&[TaskParams::new(2.0, 1.0)]);
        assert_eq!(d.train_len(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(d.minibatch(64, &mut rng).iter().all(|t| t.psi == 2.0));
        assert_eq!(d.task_range(1), 3..8);
    }
}
