use serde::{Deserialize, Serialize};

use super::HzError;
use crate::envfam::FamilySpec;
use crate::solver::Profile;

/// Which heads and loss terms a hypernetwork trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Policy heads only, action loss only.
    Pi,
    /// Policy and critic heads, prediction loss without the TD term.
    PiQ,
    /// Full prediction loss plus the TD term.
    #[default]
    PiQTd,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Pi, Variant::PiQ, Variant::PiQTd];

    pub fn has_critic(self) -> bool {
        !matches!(self, Variant::Pi)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Pi => "pi",
            Variant::PiQ => "pi_q",
            Variant::PiQTd => "pi_q_td",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected pi, pi_q or pi_q_td)"))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Affine map of each context coordinate onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextNorm {
    pub psi: (f64, f64),
    pub mu: (f64, f64),
}

impl ContextNorm {
    pub fn from_family(family: &FamilySpec) -> Self {
        Self {
            psi: (family.psi.lo, family.psi.hi),
            mu: (family.mu.lo, family.mu.hi),
        }
    }

    fn unit(x: f64, (lo, hi): (f64, f64)) -> f64 {
        if hi > lo {
            2.0 * (x - lo) / (hi - lo) - 1.0
        } else {
            0.0
        }
    }

    /// Normalized `[psi, mu]`; contexts beyond twice the declared range are refused.
    pub fn normalize(&self, psi: f64, mu: f64) -> Result<[f64; 2], HzError> {
        let u = [Self::unit(psi, self.psi), Self::unit(mu, self.mu)];
        if !psi.is_finite() || !mu.is_finite() || u.iter().any(|v| v.abs() > 2.0 + 1e-12) {
            return Err(HzError::ContextOutOfRange { psi, mu });
        }
        Ok(u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HzConfig {
    pub lr: f64,
    pub batch: usize,
    pub embed_dim: usize,
    pub n_blocks: usize,
    pub main_hidden: usize,
    pub td_weight: f64,
    pub total_steps: u64,
    /// Held-in validation period in updates.
    pub eval_every: u64,
    pub variant: Variant,
}

impl HzConfig {
    pub fn paper() -> Self {
        Self {
            lr: 1e-4,
            batch: 512,
            embed_dim: 256,
            n_blocks: 2,
            main_hidden: 256,
            td_weight: 1.0,
            total_steps: 500_000,
            eval_every: 5000,
            variant: Variant::PiQTd,
        }
    }

    pub fn desk() -> Self {
        Self {
            embed_dim: 64,
            main_hidden: 64,
            total_steps: 50_000,
            eval_every: 1000,
            ..Self::paper()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// The TD weight actually applied, which is zero unless the variant uses it.
    pub fn effective_td_weight(&self) -> f64 {
        match self.variant {
            Variant::PiQTd => self.td_weight,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), HzError> {
        if self.lr.is_nan()
            || self.lr <= 0.0
            || self.batch == 0
            || self.embed_dim == 0
            || self.main_hidden == 0
        {
            return Err(HzError::InvalidConfig(
                "lr, batch, embed_dim and main_hidden must be positive".into(),
            ));
        }
        if self.total_steps == 0 || self.eval_every == 0 {
            return Err(HzError::InvalidConfig(
                "total_steps and eval_every must be positive".into(),
            ));
        }
        if self.td_weight.is_nan() || self.td_weight < 0.0 {
            return Err(HzError::InvalidConfig(format!(
                "td_weight {} must be >= 0",
                self.td_weight
            )));
        }
        Ok(())
    }
}
