//! Policy-optimization arithmetic for group-sampled rollouts.
//!
//! Nothing here touches model parameters. Trainers pass in per-rollout rewards
//! and summed log-probabilities and get scalars back.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rollouts per prompt in the geometric-reward stage.
pub const VRA_GROUP_SIZE: usize = 8;
/// Rollouts per prompt in the aesthetic-feedback stage.
pub const RLAF_GROUP_SIZE: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("rollout group is empty")]
    EmptyGroup,
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("perturbation losses are empty but the perturbation weight is positive")]
    EmptyPerturbations,
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub rewards: Vec<f64>,
    /// Summed token log-probabilities under the current policy.
    pub logp_new: Vec<f64>,
    /// Same, under the policy that generated the rollouts.
    pub logp_old: Vec<f64>,
    /// Same, under the frozen reference policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp_ref: Option<Vec<f64>>,
}

impl RolloutGroup {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.rewards.len();
        if k == 0 {
            return Err(PolicyError::EmptyGroup);
        }
        let mut lists = vec![
            ("rewards", &self.rewards),
            ("logp_new", &self.logp_new),
            ("logp_old", &self.logp_old),
        ];
        if let Some(r) = &self.logp_ref {
            lists.push(("logp_ref", r));
        }
        for (what, list) in lists {
            if list.len() != k {
                return Err(PolicyError::LengthMismatch {
                    what,
                    got: list.len(),
                    expected: k,
                });
            }
            if list.iter().any(|v| !v.is_finite()) {
                return Err(PolicyError::NonFinite(what));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlEstimator {
    /// `exp(d) - d - 1` with `d = logp_ref - logp_new`; never negative.
    #[default]
    K3,
    /// Plain `mean(logp_new - logp_ref)`; unbiased but can go negative.
    MeanLogRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub beta: f64,
    pub clip_eps: f64,
    #[serde(default)]
    pub kl: KlEstimator,
}

impl OptimConfig {
    /// KL 0.01, clip 0.2.
    pub fn vra() -> Self {
        Self {
            beta: 0.01,
            clip_eps: 0.2,
            kl: KlEstimator::K3,
        }
    }

    /// KL 0.01, clip 0.4.
    pub fn rlaf() -> Self {
        Self {
            clip_eps: 0.4,
            ..Self::vra()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(PolicyError::InvalidConfig(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(PolicyError::InvalidConfig(format!(
                "clip ratio must lie in (0, 1), got {}",
                self.clip_eps
            )));
        }
        Ok(())
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self::vra()
    }
}

/// Reward minus the group mean.
pub fn grpo_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(PolicyError::EmptyGroup);
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

pub fn prob_ratio(logp_new: f64, logp_old: f64) -> f64 {
    (logp_new - logp_old).exp()
}

pub fn kl_estimate(logp_new: &[f64], logp_ref: &[f64]) -> Result<f64> {
    kl_estimate_with(logp_new, logp_ref, KlEstimator::K3)
}

pub fn kl_estimate_with(logp_new: &[f64], logp_ref: &[f64], estimator: KlEstimator) -> Result<f64> {
    if logp_new.len() != logp_ref.len() {
        return Err(PolicyError::LengthMismatch {
            what: "logp_ref",
            got: logp_ref.len(),
            expected: logp_new.len(),
        });
    }
    if logp_new.is_empty() {
        return Err(PolicyError::EmptyGroup);
    }
    let n = logp_new.len() as f64;
    let sum: f64 = logp_new
        .iter()
        .zip(logp_ref)
        .map(|(&new, &reference)| {
            let d = reference - new;
            match estimator {
                // exp_m1 keeps precision when d is tiny; max(0) absorbs the last ulp
                KlEstimator::K3 => (d.exp_m1() - d).max(0.0),
                KlEstimator::MeanLogRatio => -d,
            }
        })
        .sum();
    Ok(sum / n)
}

/// Clipped-surrogate loss with an optional KL penalty toward the reference policy.
///
/// `loss = -(1/K) * sum_i min(r_i * A_i, clip(r_i, 1 - eps, 1 + eps) * A_i) + beta * KL`,
/// where `A` comes from [`grpo_advantages`]. The KL term is zero when the group
/// carries no reference log-probabilities.
pub fn clipped_surrogate(group: &RolloutGroup, cfg: &OptimConfig) -> Result<f64> {
    group.validate()?;
    cfg.validate()?;
    let adv = grpo_advantages(&group.rewards)?;
    let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let k = group.len() as f64;
    let surrogate: f64 = adv
        .iter()
        .zip(group.logp_new.iter().zip(&group.logp_old))
        .map(|(&a, (&new, &old))| {
            let ratio = prob_ratio(new, old);
            (ratio * a).min(ratio.clamp(lo, hi) * a)
        })
        .sum::<f64>()
        / k;
    let kl = match &group.logp_ref {
        Some(reference) if cfg.beta > 0.0 => kl_estimate_with(&group.logp_new, reference, cfg.kl)?,
        _ => 0.0,
    };
    Ok(-surrogate + cfg.beta * kl)
}

/// `ce_gt + lambda_pert * mean(ce_perts)`.
pub fn psft_loss(ce_gt: f64, ce_perts: &[f64], lambda_pert: f64) -> Result<f64> {
    if lambda_pert == 0.0 {
        return Ok(ce_gt);
    }
    if ce_perts.is_empty() {
        return Err(PolicyError::EmptyPerturbations);
    }
    let mean = ce_perts.iter().sum::<f64>() / ce_perts.len() as f64;
    Ok(ce_gt + lambda_pert * mean)
}
