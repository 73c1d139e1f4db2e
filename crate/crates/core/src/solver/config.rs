use serde::{Deserialize, Serialize};

use super::SolverError;

/// Linear schedule `start → end` over `duration` steps, then flat at `end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
    pub duration: u64,
}

impl LinearSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.duration == 0 {
            return self.end;
        }
        let frac = (step as f64 / self.duration as f64).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

/// Named hyperparameter profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Scaled down for a single desktop.
    Desk,
    /// Published hyperparameters.
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(format!("unknown profile `{other}`")),
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Td3Config {
    /// Critic learning rate.
    pub lr: f64,
    pub actor_lr: f64,
    pub batch: usize,
    /// Actor (and delayed) update period `d`, in critic updates.
    pub actor_update_freq: u64,
    pub target_update_freq: u64,
    pub tau: f64,
    pub smoothing_noise_std: f64,
    /// Target policy smoothing noise is clipped to `[-c, c]`.
    pub smoothing_clip: f64,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub buffer_capacity: usize,
    pub gamma: f64,
    /// Environment steps collected before the first update.
    pub seed_frames: u64,
    /// Steps driven by uniformly random actions.
    pub exploration_steps: u64,
    pub exploration_std: LinearSchedule,
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Abort when the critic loss exceeds this.
    pub max_critic_loss: f64,
}

impl Td3Config {
    pub fn paper() -> Self {
        Self {
            lr: 1e-4,
            actor_lr: 1e-4,
            batch: 256,
            actor_update_freq: 2,
            target_update_freq: 2,
            tau: 0.01,
            smoothing_noise_std: 0.2,
            smoothing_clip: 0.3,
            hidden_dim: 256,
            hidden_layers: 1,
            buffer_capacity: 1_000_000,
            gamma: 0.99,
            seed_frames: 4000,
            exploration_steps: 2000,
            exploration_std: LinearSchedule {
                start: 1.0,
                end: 0.1,
                duration: 1_000_000,
            },
            total_steps: 1_000_000,
            eval_every: 1000,
            eval_episodes: 3,
            max_critic_loss: 1e6,
        }
    }

    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            hidden_dim: 64,
            buffer_capacity: 100_000,
            batch: 128,
            total_steps: 30_000,
            exploration_std: LinearSchedule {
                start: 1.0,
                end: 0.1,
                duration: 30_000,
            },
            seed_frames: 1000,
            exploration_steps: 500,
            ..Self::paper()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::InvalidConfig(m));
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau {} outside (0, 1]", self.tau));
        }
        if self.smoothing_clip <= 0.0 {
            return bad(format!(
                "smoothing clip {} must be > 0",
                self.smoothing_clip
            ));
        }
        if self.exploration_std.end > self.exploration_std.start {
            return bad("exploration schedule must not increase".into());
        }
        if self.lr <= 0.0
            || self.actor_lr <= 0.0
            || self.batch == 0
            || self.hidden_dim == 0
            || self.buffer_capacity == 0
        {
            return bad("lr, batch, hidden_dim and buffer_capacity must be positive".into());
        }
        if self.actor_update_freq == 0 || self.target_update_freq == 0 {
            return bad("update frequencies must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_linear_then_flat() {
        let s = LinearSchedule {
            start: 1.0,
            end: 0.1,
            duration: 100,
        };
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(50) - 0.55).abs() < 1e-12);
        assert!((s.value(100) - 0.1).abs() < 1e-12);
        assert!((s.value(10_000) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn published_values() {
        let c = Td3Config::paper();
        assert_eq!(c.lr, 1e-4);
        assert_eq!(c.batch, 256);
        assert_eq!(c.actor_update_freq, 2);
        assert_eq!(c.target_update_freq, 2);
        assert_eq!(c.tau, 0.01);
        assert_eq!(c.smoothing_clip, 0.3);
        assert_eq!(c.hidden_dim, 256);
        assert_eq!(c.buffer_capacity, 1_000_000);
        assert_eq!(c.gamma, 0.99);
        assert_eq!(c.seed_frames, 4000);
        assert_eq!(c.exploration_steps, 2000);
        assert_eq!(
            c.exploration_std,
            LinearSchedule {
                start: 1.0,
                end: 0.1,
                duration: 1_000_000
            }
        );
        c.validate().unwrap();
        let d = Td3Config::desk();
        d.validate().unwrap();
        assert_eq!(
            (d.hidden_dim, d.buffer_capacity, d.batch, d.total_steps),
            (64, 100_000, 128, 30_000)
        );
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = Td3Config::desk();
        c.tau = 0.0;
        assert!(c.validate().is_err());
        let mut c = Td3Config::desk();
        c.smoothing_clip = 0.0;
        assert!(c.validate().is_err());
        let mut c = Td3Config::desk();
        c.exploration_std.end = 2.0;
        assert!(c.validate().is_err());
    }
}
