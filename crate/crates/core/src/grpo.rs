//! Group-relative advantages, the clipped surrogate and the per-sample KL
//! penalty of the GRPO objective.
//!
//! ```text
//! A_i = (R_i - mean(R)) / max(std(R), sigma_floor)        (population std)
//! J   = mean_i [ min(w_i A_i, clip(w_i, 1-eps, 1+eps) A_i) - beta * KL_i ]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-8;

/// Rewards of one sampled group; always at least two members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardGroup(Vec<f64>);

impl RewardGroup {
    pub fn new(rewards: Vec<f64>) -> Result<Self> {
        if rewards.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a reward group needs at least 2 members, got {}",
                rewards.len()
            )));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("reward".into()));
        }
        Ok(Self(rewards))
    }

    pub fn rewards(&self) -> &[f64] {
        &self.0
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Normalizes rewards within the group. An all-equal group yields all zeros.
pub fn group_advantages(group: &RewardGroup, sigma_floor: f64) -> Vec<f64> {
    normalize(group.rewards(), sigma_floor)
}

pub(crate) fn normalize(xs: &[f64], sigma_floor: f64) -> Vec<f64> {
    // exact zeros for identical rewards; the rounded mean need not equal them
    if xs.iter().all(|&x| x == xs[0]) {
        return vec![0.0; xs.len()];
    }
    let (mean, std) = mean_std(xs);
    let denom = std.max(sigma_floor);
    xs.iter().map(|x| (x - mean) / denom).collect()
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    unclipped.min(clipped)
}

/// True when the minimum selects the unclipped term, i.e. when the ratio
/// carries gradient. At equality the unclipped branch is chosen.
pub fn unclipped_selected(ratio: f64, advantage: f64, epsilon: f64) -> bool {
    ratio * advantage <= ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage
}

/// Nonnegative per-sample KL estimate `exp(d) - d - 1` with `d = logp_ref - logp_new`.
pub fn kl_estimate(logp_new: f64, logp_ref: f64) -> Result<f64> {
    if !logp_new.is_finite() || !logp_ref.is_finite() {
        return Err(Error::NonFinite(format!(
            "log-probabilities ({logp_new}, {logp_ref})"
        )));
    }
    let d = logp_ref - logp_new;
    Ok((d.exp_m1() - d).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSample {
    pub ratio: f64,
    pub advantage: f64,
    pub kl: f64,
}

impl SurrogateSample {
    pub fn new(ratio: f64, advantage: f64, kl: f64) -> Result<Self> {
        if !(ratio > 0.0) || !ratio.is_finite() {
            return Err(Error::InvalidArgument(format!("ratio must be positive, got {ratio}")));
        }
        if !(kl >= 0.0) {
            return Err(Error::InvalidArgument(format!("KL must be nonnegative, got {kl}")));
        }
        Ok(Self { ratio, advantage, kl })
    }

    /// Builds a sample from sequence log-probabilities under the new, old and
    /// reference policies.
    pub fn from_log_probs(logp_new: f64, logp_old: f64, logp_ref: f64, advantage: f64) -> Result<Self> {
        let kl = kl_estimate(logp_new, logp_ref)?;
        Self::new((logp_new - logp_old).exp(), advantage, kl)
    }
}

pub fn rft_objective(samples: &[SurrogateSample], epsilon: f64, beta: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty sample list".into()));
    }
    let sum: f64 = samples
        .iter()
        .map(|s| clipped_surrogate(s.ratio, s.advantage, epsilon) - beta * s.kl)
        .sum();
    Ok(sum / samples.len() as f64)
}
