//! Reward algebra: thresholded process reward, the composite reward with outcome
//! regularization, the MetaRM-derived reward, and group-normalized advantages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Similarity above which a critique earns process reward (strict).
pub const PROCESS_THRESHOLD: f64 = 0.5;

/// Groups with a standard deviation below this get zero advantage.
pub const DEFAULT_STD_GUARD: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("similarity {0} outside [0, 1]")]
    Domain(f64),
    #[error("lambda {0} outside [0, 1]")]
    Lambda(f64),
    #[error("process reward required for a label-matching, well-formed output")]
    MissingProcess,
    #[error("empty reward group")]
    EmptyGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSource {
    HumanCritique,
    Metarm,
    OutcomeOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub outcome_correct: bool,
    pub format_valid: bool,
    pub process_score: Option<f64>,
    pub composite: f64,
    pub source: RewardSource,
}

pub fn process_reward(similarity: f64) -> Result<u8, RewardError> {
    if !(0.0..=1.0).contains(&similarity) {
        return Err(RewardError::Domain(similarity));
    }
    Ok(u8::from(similarity > PROCESS_THRESHOLD))
}

fn check_lambda(lambda: f64) -> Result<(), RewardError> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(RewardError::Lambda(lambda))
    }
}

/// `-1` for malformed output, `1 + λ·r` for a correct label, and for a wrong label either
/// `0` (regularized) or `λ·r` (the ablation without outcome regularization).
pub fn composite_reward(
    format_valid: bool,
    label_match: bool,
    r_process: Option<u8>,
    lambda: f64,
    regularized: bool,
) -> Result<f64, RewardError> {
    check_lambda(lambda)?;
    if !format_valid {
        return Ok(-1.0);
    }
    if !label_match && regularized {
        return Ok(0.0);
    }
    let r = f64::from(r_process.ok_or(RewardError::MissingProcess)?);
    Ok(if label_match {
        1.0 + lambda * r
    } else {
        lambda * r
    })
}

/// Reward for a sample without human critique: a correct label earns `1` plus the MetaRM's
/// excess over `1`, clipped to `[0, λ]`.
pub fn metarm_reward(
    format_valid: bool,
    label_match: bool,
    r_meta: f64,
    lambda: f64,
) -> Result<f64, RewardError> {
    check_lambda(lambda)?;
    Ok(if !format_valid {
        -1.0
    } else if !label_match {
        0.0
    } else {
        1.0 + (r_meta - 1.0).max(0.0).min(lambda)
    })
}

/// [`metarm_reward`] with the outcome regularization switchable. Unregularized, a wrong
/// label still earns the MetaRM's prediction, clipped to `[0, λ]`.
pub fn metarm_reward_with(
    format_valid: bool,
    label_match: bool,
    r_meta: f64,
    lambda: f64,
    regularized: bool,
) -> Result<f64, RewardError> {
    if format_valid && !label_match && !regularized {
        check_lambda(lambda)?;
        return Ok(r_meta.max(0.0).min(lambda));
    }
    metarm_reward(format_valid, label_match, r_meta, lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdMode {
    /// `sqrt(mean((r - mean)^2))`, the usual GRPO normalizer.
    #[default]
    Population,
    /// `sqrt(sum((r - mean)^2)) / N`, with the division outside the root.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAdvantages {
    pub rewards: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub advantages: Vec<f64>,
}

pub fn group_advantages(rewards: &[f64], guard: f64) -> Result<GroupAdvantages, RewardError> {
    group_advantages_with(rewards, guard, StdMode::Population)
}

pub fn group_advantages_with(
    rewards: &[f64],
    guard: f64,
    mode: StdMode,
) -> Result<GroupAdvantages, RewardError> {
    if rewards.is_empty() {
        return Err(RewardError::EmptyGroup);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let ss: f64 = rewards.iter().map(|r| (r - mean).powi(2)).sum();
    let std = match mode {
        StdMode::Population => (ss / n).sqrt(),
        StdMode::Literal => ss.sqrt() / n,
    };
    let advantages = if std >= guard {
        rewards.iter().map(|r| (r - mean) / std).collect()
    } else {
        vec![0.0; rewards.len()]
    };
    Ok(GroupAdvantages {
        rewards: rewards.to_vec(),
        mean,
        std,
        advantages,
    })
}
