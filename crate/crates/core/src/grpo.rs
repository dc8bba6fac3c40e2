//! Clipped-ratio GRPO surrogate with an exact categorical KL penalty, its analytic
//! gradient, and the first-order update.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{RolloutRecord, ToyPolicy};
use crate::reward::GroupAdvantages;

#[derive(Debug, Error, PartialEq)]
pub enum GrpoError {
    #[error("group {group}: {rollouts} rollouts but {advantages} advantages")]
    GroupShape {
        group: usize,
        rollouts: usize,
        advantages: usize,
    },
    #[error("rollout for {sample_id} has {got} decisions, layout expects {expected}")]
    DecisionShape {
        sample_id: String,
        got: usize,
        expected: usize,
    },
    #[error("gradient has {got} entries, policy has {expected}")]
    GradientShape { got: usize, expected: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid hyperparameter: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub epsilon: f64,
    pub beta: f64,
    pub temperature: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            epsilon: 0.2,
            beta: 0.001,
            temperature: 0.7,
        }
    }
}

/// Rollouts of one prompt with their group-normalized advantages.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub rollouts: Vec<RolloutRecord>,
    pub advantages: GroupAdvantages,
}

/// Breakdown of the last surrogate evaluation, mostly for diagnostics and tests.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SurrogateStats {
    pub objective: f64,
    pub policy_term: f64,
    pub mean_kl: f64,
    pub clipped_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct SurrogateOutput {
    /// Negated objective.
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub stats: SurrogateStats,
}

/// Exact `KL(p || q)` between two categoricals given as log-probabilities.
pub fn categorical_kl(log_p: &[f64], log_q: &[f64]) -> f64 {
    log_p
        .iter()
        .zip(log_q)
        .map(|(lp, lq)| lp.exp() * (lp - lq))
        .sum()
}

fn clip(r: f64, eps: f64) -> f64 {
    r.clamp(1.0 - eps, 1.0 + eps)
}

#[derive(Default)]
struct Accum {
    policy: f64,
    kl: f64,
    clipped: usize,
    decisions: usize,
    grad: Vec<f64>,
}

/// Loss and gradient of the negated GRPO objective
/// `mean_i mean_t [min(r·Â, clip(r)·Â) − β·KL_t(π_θ || π_ref)]`.
pub fn surrogate_loss(
    policy: &ToyPolicy,
    groups: &[RolloutGroup],
    config: &SurrogateConfig,
    reference: &ToyPolicy,
) -> Result<SurrogateOutput, GrpoError> {
    if config.epsilon <= 0.0 || config.beta < 0.0 || config.temperature <= 0.0 {
        return Err(GrpoError::Config(format!("{config:?}")));
    }
    let layout = policy.layout;
    let n_decisions = layout.n_decisions();
    for (g, group) in groups.iter().enumerate() {
        if group.rollouts.len() != group.advantages.advantages.len() {
            return Err(GrpoError::GroupShape {
                group: g,
                rollouts: group.rollouts.len(),
                advantages: group.advantages.advantages.len(),
            });
        }
        for r in &group.rollouts {
            if r.decisions.len() != n_decisions
                || r.logprobs_old.len() != n_decisions
                || r.contexts.len() != n_decisions
            {
                return Err(GrpoError::DecisionShape {
                    sample_id: r.sample_id.clone(),
                    got: r.decisions.len(),
                    expected: n_decisions,
                });
            }
        }
    }
    let n_rollouts: usize = groups.iter().map(|g| g.rollouts.len()).sum();
    let n_params = layout.n_params();
    if n_rollouts == 0 {
        return Ok(SurrogateOutput {
            loss: 0.0,
            gradient: vec![0.0; n_params],
            stats: SurrogateStats::default(),
        });
    }

    let cols = layout.n_logits();
    let temp = config.temperature;
    let per_group: Vec<Accum> = groups
        .par_iter()
        .map(|group| {
            let mut acc = Accum {
                grad: vec![0.0; n_params],
                ..Accum::default()
            };
            for (rollout, &adv) in group.rollouts.iter().zip(&group.advantages.advantages) {
                for t in 0..n_decisions {
                    let ctx = &rollout.contexts[t];
                    let a = rollout.decisions[t];
                    let log_p = policy.log_probs(ctx, t, temp);
                    let log_q = reference.log_probs(ctx, t, temp);
                    let ratio = (log_p[a] - rollout.logprobs_old[t]).exp();
                    let unclipped = ratio * adv;
                    let clipped = clip(ratio, config.epsilon) * adv;
                    let kl = categorical_kl(&log_p, &log_q);
                    acc.policy += unclipped.min(clipped);
                    acc.kl += kl;
                    acc.decisions += 1;
                    let ratio_active = unclipped <= clipped;
                    if !ratio_active {
                        acc.clipped += 1;
                    }
                    // d(objective term)/d(logit_j)
                    let block = layout.block(t);
                    for (local, j) in block.enumerate() {
                        let p = log_p[local].exp();
                        let indicator = if local == a { 1.0 } else { 0.0 };
                        let mut coeff = 0.0;
                        if ratio_active {
                            coeff += adv * ratio * (indicator - p) / temp;
                        }
                        coeff -= config.beta * p * (log_p[local] - log_q[local] - kl) / temp;
                        if coeff != 0.0 {
                            for (f, x) in ctx.iter().enumerate() {
                                acc.grad[f * cols + j] += coeff * x;
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let scale = 1.0 / (n_rollouts as f64 * n_decisions as f64);
    let mut gradient = vec![0.0; n_params];
    let (mut policy_sum, mut kl_sum, mut clipped, mut decisions) = (0.0, 0.0, 0, 0);
    for acc in &per_group {
        policy_sum += acc.policy;
        kl_sum += acc.kl;
        clipped += acc.clipped;
        decisions += acc.decisions;
        for (g, v) in gradient.iter_mut().zip(&acc.grad) {
            *g += v;
        }
    }
    for g in &mut gradient {
        *g *= -scale;
    }
    let policy_term = policy_sum * scale;
    let mean_kl = kl_sum * scale;
    let objective = policy_term - config.beta * mean_kl;
    Ok(SurrogateOutput {
        loss: -objective,
        gradient,
        stats: SurrogateStats {
            objective,
            policy_term,
            mean_kl,
            clipped_fraction: clipped as f64 / decisions.max(1) as f64,
        },
    })
}

/// Mean per-decision KL to `reference` over the contexts of the given rollouts.
pub fn mean_kl(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    rollouts: &[RolloutRecord],
    temperature: f64,
) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for r in rollouts {
        for (t, ctx) in r.contexts.iter().enumerate() {
            total += categorical_kl(
                &policy.log_probs(ctx, t, temperature),
                &reference.log_probs(ctx, t, temperature),
            );
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

pub fn gradient_norm(gradient: &[f64]) -> f64 {
    gradient.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// One gradient-descent step on the loss, with optional global-norm clipping.
pub fn policy_update(
    policy: &ToyPolicy,
    gradient: &[f64],
    learning_rate: f64,
    clip_norm: Option<f64>,
) -> Result<ToyPolicy, GrpoError> {
    if learning_rate <= 0.0 {
        return Err(GrpoError::Config(format!("learning rate {learning_rate}")));
    }
    if gradient.len() != policy.weights.len() {
        return Err(GrpoError::GradientShape {
            got: gradient.len(),
            expected: policy.weights.len(),
        });
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(GrpoError::NonFinite("gradient"));
    }
    let norm = gradient_norm(gradient);
    let factor = match clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    let mut next = policy.clone();
    for (w, g) in next.weights.iter_mut().zip(gradient) {
        *w -= learning_rate * factor * g;
    }
    if !next.is_finite() {
        return Err(GrpoError::NonFinite("parameters"));
    }
    Ok(next)
}

/// The gradient actually applied after clipping to `clip_norm`.
pub fn clipped_gradient(gradient: &[f64], clip_norm: f64) -> Vec<f64> {
    let norm = gradient_norm(gradient);
    if norm > clip_norm {
        gradient.iter().map(|g| g * clip_norm / norm).collect()
    } else {
        gradient.to_vec()
    }
}
