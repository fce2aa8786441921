//! Group-relative advantages, the per-token KL estimator, the surrogate
//! objective value and the SFT negative log-likelihood.
//!
//! These are value computations over log-probabilities supplied by a model
//! backend. Gradients and parameter updates belong to an external trainer.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Floor on the group standard deviation.
pub const STD_EPSILON: f64 = 1e-8;
/// Log-ratios are clamped to `±KL_LOG_CLAMP` before exponentiation.
pub const KL_LOG_CLAMP: f64 = 30.0;
pub const DEFAULT_BETA: f64 = 0.04;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("group has {0} rollouts; at least 2 are required")]
    GroupTooSmall(usize),
    #[error("reward {0} is not finite")]
    NonFiniteReward(usize),
    #[error("beta must be non-negative and finite, got {0}")]
    BadBeta(f64),
    #[error("clip epsilon must lie in (0, 1), got {0}")]
    BadClip(f64),
    #[error("group has no log-probability traces")]
    MissingTraces,
    #[error("{traces} traces for {rewards} rewards")]
    TraceCountMismatch { traces: usize, rewards: usize },
    #[error("trace {0}: theta/old/ref vectors differ in length")]
    MisalignedTrace(usize),
    #[error("trace {0} is empty")]
    EmptyTrace(usize),
    #[error("trace {0}: log-probabilities must be finite and <= 0")]
    InvalidLogprob(usize),
    #[error("log-probability sequence is empty")]
    EmptySequence,
}

/// Per-token log-probabilities of one sampled sequence under the current,
/// old and reference policies.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LogprobTrace {
    pub theta: Vec<f64>,
    pub old: Vec<f64>,
    #[serde(rename = "ref")]
    pub reference: Vec<f64>,
}

impl LogprobTrace {
    fn check(&self, rollout: usize) -> Result<(), GrpoError> {
        let n = self.theta.len();
        if self.old.len() != n || self.reference.len() != n {
            return Err(GrpoError::MisalignedTrace(rollout));
        }
        if n == 0 {
            return Err(GrpoError::EmptyTrace(rollout));
        }
        let valid = |x: &f64| x.is_finite() && *x <= 0.0;
        if !(self.theta.iter().all(valid) && self.old.iter().all(valid) && self.reference.iter().all(valid)) {
            return Err(GrpoError::InvalidLogprob(rollout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub query_id: String,
    pub rewards: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traces: Option<Vec<LogprobTrace>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub beta: f64,
    /// PPO-style ratio clipping. Off by default; the plain objective has none.
    pub clip_epsilon: Option<f64>,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            clip_epsilon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAdvantages {
    pub advantages: Vec<f64>,
    /// Sequence-level importance ratios `pi_theta / pi_old`.
    pub ratios: Vec<f64>,
    pub kl_per_rollout: Vec<f64>,
    pub objective_value: f64,
    pub beta: f64,
}

/// Z-scores with population standard deviation, floored at [`STD_EPSILON`].
/// A constant group gives all-zero advantages.
pub fn advantages(rewards: &[f64]) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(GrpoError::NonFiniteReward(i));
    }
    let first = rewards[0];
    if rewards.iter().all(|&r| r == first) {
        return Ok(alloc::vec![0.0; rewards.len()]);
    }
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g;
    let std = libm::sqrt(var).max(STD_EPSILON);
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// `rho - ln(rho) - 1` with `rho = pi_ref / pi_theta`, computed from the
/// log difference (clamped to `±KL_LOG_CLAMP`). Always `>= 0`.
pub fn kl_value(logp_theta: f64, logp_ref: f64) -> f64 {
    let d = (logp_ref - logp_theta).clamp(-KL_LOG_CLAMP, KL_LOG_CLAMP);
    // expm1 keeps precision for small |d| where exp(d) - 1 would cancel.
    (libm::expm1(d) - d).max(0.0)
}

/// Token-mean of [`kl_value`] over aligned per-token log-probabilities.
pub fn sequence_kl(theta: &[f64], reference: &[f64]) -> f64 {
    debug_assert_eq!(theta.len(), reference.len());
    if theta.is_empty() {
        return 0.0;
    }
    let sum: f64 = theta.iter().zip(reference).map(|(&t, &r)| kl_value(t, r)).sum();
    sum / theta.len() as f64
}

/// Sequence-level ratio `exp(sum(theta) - sum(old))`, log clamped.
pub fn importance_ratio(theta: &[f64], old: &[f64]) -> f64 {
    let log_ratio: f64 = theta.iter().sum::<f64>() - old.iter().sum::<f64>();
    libm::exp(log_ratio.clamp(-KL_LOG_CLAMP, KL_LOG_CLAMP))
}

fn surrogate(ratio: f64, advantage: f64, clip: Option<f64>) -> f64 {
    match clip {
        None => ratio * advantage,
        Some(eps) => {
            let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
            (ratio * advantage).min(clipped * advantage)
        }
    }
}

/// `(1/G) * sum_i (surrogate_i - beta * kl_i)`.
pub fn objective_from_parts(
    ratios: &[f64],
    advantages: &[f64],
    kls: &[f64],
    beta: f64,
    clip: Option<f64>,
) -> f64 {
    debug_assert!(ratios.len() == advantages.len() && kls.len() == advantages.len());
    let g = advantages.len() as f64;
    let sum: f64 = ratios
        .iter()
        .zip(advantages)
        .zip(kls)
        .map(|((&r, &a), &k)| surrogate(r, a, clip) - beta * k)
        .sum();
    sum / g
}

pub fn grpo_objective(group: &RolloutGroup, cfg: &GrpoConfig) -> Result<GroupAdvantages, GrpoError> {
    if !(cfg.beta >= 0.0 && cfg.beta.is_finite()) {
        return Err(GrpoError::BadBeta(cfg.beta));
    }
    if let Some(eps) = cfg.clip_epsilon {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(GrpoError::BadClip(eps));
        }
    }
    let advantages = advantages(&group.rewards)?;
    let traces = group.traces.as_ref().ok_or(GrpoError::MissingTraces)?;
    if traces.len() != group.rewards.len() {
        return Err(GrpoError::TraceCountMismatch {
            traces: traces.len(),
            rewards: group.rewards.len(),
        });
    }
    for (i, t) in traces.iter().enumerate() {
        t.check(i)?;
    }
    let ratios: Vec<f64> = traces.iter().map(|t| importance_ratio(&t.theta, &t.old)).collect();
    let kl_per_rollout: Vec<f64> = traces.iter().map(|t| sequence_kl(&t.theta, &t.reference)).collect();
    let objective_value = objective_from_parts(&ratios, &advantages, &kl_per_rollout, cfg.beta, cfg.clip_epsilon);
    Ok(GroupAdvantages {
        advantages,
        ratios,
        kl_per_rollout,
        objective_value,
        beta: cfg.beta,
    })
}

/// Token-mean negative log-likelihood of the target reasoning tokens.
pub fn sft_nll(logprobs: &[f64]) -> Result<f64, GrpoError> {
    if logprobs.is_empty() {
        return Err(GrpoError::EmptySequence);
    }
    if logprobs.iter().any(|x| !(x.is_finite() && *x <= 0.0)) {
        return Err(GrpoError::InvalidLogprob(0));
    }
    Ok(-logprobs.iter().sum::<f64>() / logprobs.len() as f64)
}
