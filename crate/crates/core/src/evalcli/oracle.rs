use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::envfam::{Dynamics, FamilySpec, TaskParams};
use crate::solver::{qstar_label, QLabelRule, Td3Solution};

/// Finite-horizon optimal values on a velocity grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTable {
    pub task: TaskParams,
    pub horizon: usize,
    pub gamma: f64,
    pub v: Vec<f64>,
    /// `V_H(v)` at each grid point.
    pub values: Vec<f64>,
    /// First greedy action at each grid point.
    pub greedy: Vec<f64>,
}

fn nearest(grid: &[f64], lo: f64, step: f64, v: f64) -> usize {
    (((v - lo) / step).round().max(0.0) as usize).min(grid.len() - 1)
}

/// Backward induction over a discretized speed. Successor speeds snap to
/// the nearest grid point; rewards use the exact successor speed.
pub fn value_iteration_oracle(
    family: &FamilySpec,
    task: TaskParams,
    v_grid: usize,
    n_actions: usize,
    horizon: usize,
) -> Result<OracleTable, EvalError> {
    if family.dynamics != Dynamics::PointMass1d {
        return Err(EvalError::Oracle(format!(
            "`{}` is not a one-dimensional speed family",
            family.name
        )));
    }
    if v_grid < 2 || n_actions < 2 {
        return Err(EvalError::Oracle(
            "need at least two grid points and two actions".into(),
        ));
    }
    let vmax = family.speed_bound().expect("point mass has a speed bound");
    let step = 2.0 * vmax / (v_grid - 1) as f64;
    let v: Vec<f64> = (0..v_grid).map(|i| -vmax + step * i as f64).collect();
    let bound = family.action_bound;
    let actions: Vec<f64> = (0..n_actions)
        .map(|j| -bound + 2.0 * bound * j as f64 / (n_actions - 1) as f64)
        .collect();
    let instance = family.instance(task);
    // Successor index and reward for every (grid point, action).
    let mut succ = Vec::with_capacity(v_grid * n_actions);
    for &vi in &v {
        for &a in &actions {
            let s = instance.step(&[0.0, vi], &[a])?;
            succ.push((nearest(&v, -vmax, step, s.next_state[1]), s.reward));
        }
    }
    let mut values = vec![0.0; v_grid];
    let mut greedy = vec![0.0; v_grid];
    for _ in 0..horizon {
        let mut next = vec![f64::NEG_INFINITY; v_grid];
        for i in 0..v_grid {
            for (j, &a) in actions.iter().enumerate() {
                let (k, r) = succ[i * n_actions + j];
                let q = r + family.gamma * values[k];
                if q > next[i] {
                    next[i] = q;
                    greedy[i] = a;
                }
            }
        }
        values = next;
    }
    Ok(OracleTable {
        task,
        horizon,
        gamma: family.gamma,
        v,
        values,
        greedy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticComparison {
    /// `Q(s, pi(s))` of the solver's critic at each grid point.
    pub critic: Vec<f64>,
    pub median_abs_error: f64,
    pub value_range: f64,
    /// `median_abs_error / value_range`.
    pub relative: f64,
}

/// Compare a solver's critic, evaluated along its own policy, with the oracle.
pub fn compare_critic(solution: &Td3Solution, table: &OracleTable) -> CriticComparison {
    let family = &solution.family;
    let critic: Vec<f64> = table
        .v
        .iter()
        .map(|&v| {
            let obs = family.observe(&[0.0, v]);
            let a = solution.actor.act(&obs);
            qstar_label(&solution.critics, &obs, &a, QLabelRule::Min)
        })
        .collect();
    let mut errors: Vec<f64> = critic
        .iter()
        .zip(&table.values)
        .map(|(q, v)| (q - v).abs())
        .collect();
    errors.sort_by(f64::total_cmp);
    let n = errors.len();
    let median = if n % 2 == 1 {
        errors[n / 2]
    } else {
        0.5 * (errors[n / 2 - 1] + errors[n / 2])
    };
    let hi = table
        .values
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let lo = table.values.iter().copied().fold(f64::INFINITY, f64::min);
    let range = hi - lo;
    CriticComparison {
        critic,
        median_abs_error: median,
        value_range: range,
        relative: median / range,
    }
}
