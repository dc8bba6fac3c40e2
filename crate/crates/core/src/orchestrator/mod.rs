//! The online training loop: dual-stream batches, human-critique scoring on D_H, a MetaRM
//! refresh, MetaRM scoring on D_O, then one GRPO update. Plus the experiment runner.

pub mod checkpoint;
pub mod config;
pub mod metrics;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{EnvironmentError, EnvironmentSpec};
use crate::grpo::{
    policy_update, surrogate_loss, GrpoError, RolloutGroup, SurrogateConfig, SurrogateStats,
};
use crate::judge::JudgeError;
use crate::metarm::{
    cold_start, human_critique_reward, online_update, target_for, ColdStartConfig, CritiqueItem,
    Featurizer, MetaRmError, MetaRmModel, MetaRmTarget, TargetRules, TrainSettings,
};
use crate::policy::{rollout, PolicyLayout, RolloutRecord, ToyPolicy};
use crate::preference::{split_streams, PreferenceSample};
use crate::reward::{
    composite_reward, group_advantages_with, metarm_reward_with, process_reward, RewardError,
    RewardRecord, RewardSource, DEFAULT_STD_GUARD,
};
use crate::seeds::{derive, tag};
use crate::similarity::{compute_similarity, CritiqueScorer};

pub use checkpoint::{CheckpointError, PolicyCheckpoint};
pub use config::{ConfigError, Regime, TrainConfig};
pub use metrics::{inconsistency_metrics, PhaseTimings, ScoredOutcome, StepMetrics};

const SEED_BATCH: u64 = 1;
const SEED_ROLLOUT: u64 = 2;
const SEED_METARM: u64 = 3;
const SEED_COLD: u64 = 4;
const SEED_EVAL: u64 = 5;

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    MetaRm(#[from] MetaRmError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cold start: {0}")]
    ColdStart(#[source] StepError),
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: StepError,
    },
    #[error("final evaluation: {0}")]
    Eval(#[source] StepError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    MetaRmCheckpoint(MetaRmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    /// Samples with human critiques.
    Dh,
    /// Samples without.
    Do,
}

/// Everything a step reads and replaces. Steps never mutate a state in place.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub step: usize,
    pub policy: ToyPolicy,
    /// Frozen KL reference (the initial policy).
    pub reference: ToyPolicy,
    pub metarm: Option<MetaRmModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardedRollout {
    pub sample_id: String,
    pub stream: Stream,
    pub record: RewardRecord,
    /// Similarity to the environment's gold critique.
    pub oracle_f1: f64,
    /// Composite reward a gold-critique comparison would give.
    pub oracle_reward: f64,
    /// MetaRM prediction, where the MetaRM scored this rollout.
    pub metarm_prediction: Option<f64>,
    /// Features the MetaRM saw, so other snapshots can be compared on the same rollouts.
    pub metarm_features: Option<Vec<f64>>,
    pub argument_count: usize,
}

/// What happened inside one step, for probes and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub metarm_version_at_start: Option<u64>,
    pub metarm_version_after_update: Option<u64>,
    /// Version of the snapshot that scored every MetaRM-scored rollout this step.
    pub metarm_version_for_scoring: Option<u64>,
    pub metarm_targets: usize,
    pub rewards: Vec<RewardedRollout>,
    pub surrogate: SurrogateStats,
    pub timings: PhaseTimings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub samples: usize,
    pub rollouts: usize,
    pub outcome_accuracy: f64,
    pub format_valid_rate: f64,
    pub mean_similarity_f1: f64,
    pub p_process0_given_outcome1: Option<f64>,
    pub p_process1_given_outcome0: Option<f64>,
    pub mean_argument_count: f64,
}

#[derive(Debug)]
pub struct RunOutput {
    pub metrics: Vec<StepMetrics>,
    pub timings: Vec<PhaseTimings>,
    pub final_eval: EvalSummary,
    pub state: TrainingState,
    /// MetaRM right after cold start, when the regime uses one.
    pub cold_metarm: Option<MetaRmModel>,
}

struct SampleOutcome {
    /// Gold label in force at this step.
    label: crate::preference::Choice,
    rollouts: Vec<RolloutRecord>,
    oracle_f1: Vec<f64>,
    oracle_reward: Vec<f64>,
    /// Human-critique composite reward, when this sample was scored against its critique.
    human_reward: Option<Vec<f64>>,
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    env: &'a EnvironmentSpec,
    scorer: &'a dyn CritiqueScorer,
    featurizer: Featurizer,
    d_h: Vec<PreferenceSample>,
    d_o: Vec<PreferenceSample>,
}

fn outcome_reward(r: &RolloutRecord, label: crate::preference::Choice) -> Result<f64, RewardError> {
    composite_reward(r.format_valid, r.label_match(label), Some(0), 0.0, true)
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: TrainConfig,
        env: &'a EnvironmentSpec,
        samples: &[PreferenceSample],
        scorer: &'a dyn CritiqueScorer,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        if env.universe_size() != config.env.universe_size {
            return Err(ConfigError::Invalid(format!(
                "environment has {} slots, config says {}",
                env.universe_size(),
                config.env.universe_size
            )));
        }
        let (d_h, d_o) = split_streams(samples);
        Ok(Trainer {
            featurizer: Featurizer::new(env),
            config,
            env,
            scorer,
            d_h,
            d_o,
        })
    }

    pub fn layout(&self) -> PolicyLayout {
        PolicyLayout {
            universe_size: self.env.universe_size(),
            garble: self.config.garble_fraction > 0.0,
        }
    }

    fn rules(&self) -> TargetRules {
        TargetRules {
            lambda: self.config.lambda,
            regularized: self.config.outcome_regularization,
            include_invalid: self.config.include_invalid_targets,
        }
    }

    fn metarm_batch(&self) -> Option<usize> {
        (self.config.metarm_batch_size > 0).then_some(self.config.metarm_batch_size)
    }

    /// Initial policy, reference and (cold-started) MetaRM.
    pub fn initial_state(&self) -> Result<TrainingState, StepError> {
        let policy = ToyPolicy::new(self.layout(), self.config.garble_fraction);
        let metarm = if self.config.regime.uses_metarm() {
            Some(self.cold_start(&policy)?)
        } else {
            None
        };
        Ok(TrainingState {
            step: 0,
            reference: policy.clone(),
            policy,
            metarm,
        })
    }

    fn cold_start(&self, policy: &ToyPolicy) -> Result<MetaRmModel, StepError> {
        let views = self
            .d_h
            .iter()
            .map(|s| self.env.view(&s.id, 0))
            .collect::<Result<Vec<_>, _>>()?;
        let items: Vec<CritiqueItem<'_>> = self
            .d_h
            .iter()
            .zip(&views)
            .map(|(s, v)| CritiqueItem {
                sample: s,
                reference: &v.gold,
                label: v.label,
                evidence: &v.evidence,
            })
            .collect();
        let cfg = ColdStartConfig {
            n_sample: self.config.cold_start_rollouts,
            temperature: self.config.temperature,
            rules: self.rules(),
            variant: self.config.metarm_variant,
            train: TrainSettings {
                epochs: self.config.metarm_cold_epochs,
                learning_rate: self.config.metarm_cold_lr,
                batch_size: self.metarm_batch(),
                seed: derive(self.config.seed, &[SEED_COLD]),
            },
        };
        let (model, targets) = cold_start(policy, &items, &self.featurizer, self.scorer, &cfg)?;
        info!("cold-started MetaRM on {} targets", targets.len());
        Ok(model)
    }

    /// The samples of step `step`, D_H first. Deterministic in `(seed, step)`.
    pub fn select_batch(&self, step: usize) -> Vec<(&PreferenceSample, Stream)> {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive(self.config.seed, &[SEED_BATCH, step as u64]));
        let size = self.config.batch_size;
        let mut n_h = ((size as f64) * self.config.dh_ratio).round() as usize;
        n_h = n_h.min(self.d_h.len());
        let n_o = (size - n_h).min(self.d_o.len());
        if n_h + n_o < size {
            n_h = (size - n_o).min(self.d_h.len());
        }
        let mut batch = Vec::with_capacity(n_h + n_o);
        let pick =
            |pool: &'_ [PreferenceSample], n: usize, stream: Stream, rng: &mut ChaCha8Rng| {
                let mut idx = sample_indices(rng, pool.len(), n).into_vec();
                idx.sort_unstable();
                idx.into_iter()
                    .map(move |i| (i, stream))
                    .collect::<Vec<_>>()
            };
        for (i, s) in pick(&self.d_h, n_h, Stream::Dh, &mut rng) {
            batch.push((&self.d_h[i], s));
        }
        for (i, s) in pick(&self.d_o, n_o, Stream::Do, &mut rng) {
            batch.push((&self.d_o[i], s));
        }
        batch
    }

    fn scores_human(&self, stream: Stream) -> bool {
        match self.config.regime {
            Regime::OutcomeOnly => false,
            Regime::FullHumanCritique => true,
            Regime::OnlyMetarm => false,
            _ => stream == Stream::Dh,
        }
    }

    /// Phases 1 and 2 for one sample: roll out, then score against the critique right away,
    /// so scoring of one sample overlaps rollouts of the others.
    fn roll_and_score(
        &self,
        policy: &ToyPolicy,
        step: usize,
        sample: &PreferenceSample,
        stream: Stream,
    ) -> Result<SampleOutcome, StepError> {
        let cfg = &self.config;
        let view = self.env.view(&sample.id, step)?;
        let seed = derive(cfg.seed, &[SEED_ROLLOUT, step as u64, tag(&sample.id)]);
        let rollouts = rollout(
            policy,
            &sample.id,
            &view.evidence,
            cfg.n_rollout,
            cfg.temperature,
            seed,
        );
        let rules = self.rules();
        let mut oracle_f1 = Vec::with_capacity(rollouts.len());
        let mut oracle_reward = Vec::with_capacity(rollouts.len());
        for r in &rollouts {
            let f1 = compute_similarity(&view.gold, &r.argument_set, cfg.match_mode).f1;
            oracle_f1.push(f1);
            oracle_reward.push(composite_reward(
                r.format_valid,
                r.label_match(view.label),
                Some(process_reward(f1)?),
                rules.lambda,
                rules.regularized,
            )?);
        }
        let human_reward =
            if self.scores_human(stream) || (stream == Stream::Dh && cfg.regime.updates_metarm()) {
                let item = CritiqueItem {
                    sample,
                    reference: &view.gold,
                    label: view.label,
                    evidence: &view.evidence,
                };
                let rewards = rollouts
                    .iter()
                    .map(|r| {
                        human_critique_reward(self.scorer, &item, r, &rules)
                            .map(|(_, reward)| reward)
                            .map_err(|e| match e {
                                MetaRmError::Judge(j) => {
                                    StepError::Judge(j.context(format!("sample {}", sample.id)))
                                }
                                other => other.into(),
                            })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Some(rewards)
            } else {
                None
            };
        Ok(SampleOutcome {
            label: view.label,
            rollouts,
            oracle_f1,
            oracle_reward,
            human_reward,
        })
    }

    /// One step of the algorithm. Returns the successor state; `state` is never touched,
    /// so a failed step leaves everything as it was.
    pub fn training_step(
        &self,
        state: &TrainingState,
        batch: &[(&PreferenceSample, Stream)],
    ) -> Result<(TrainingState, StepMetrics, StepTrace), StepError> {
        let cfg = &self.config;
        let step = state.step;
        let mut timings = PhaseTimings {
            step,
            ..PhaseTimings::default()
        };

        // (1) + (2)
        let t0 = Instant::now();
        let outcomes: Vec<SampleOutcome> = batch
            .par_iter()
            .map(|(s, stream)| self.roll_and_score(&state.policy, step, s, *stream))
            .collect::<Result<_, _>>()?;
        timings.rollout_and_human_scoring = t0.elapsed().as_secs_f64();

        // (3)
        let t0 = Instant::now();
        let version_at_start = state.metarm.as_ref().map(|m| m.version);
        let mut n_targets = 0;
        let metarm = match &state.metarm {
            Some(model) if cfg.regime.updates_metarm() => {
                let targets = self.fresh_targets(batch, &outcomes)?;
                n_targets = targets.len();
                Some(online_update(
                    model,
                    &targets,
                    cfg.effective_online_lr(),
                    cfg.effective_online_epochs(),
                    self.metarm_batch(),
                    derive(cfg.seed, &[SEED_METARM, step as u64]),
                )?)
            }
            other => other.clone(),
        };
        let version_after_update = metarm.as_ref().map(|m| m.version);
        timings.metarm_update = t0.elapsed().as_secs_f64();

        // (4)
        let t0 = Instant::now();
        let mut rewards = Vec::with_capacity(batch.len() * cfg.n_rollout);
        let mut scoring_version = None;
        for ((sample, stream), out) in batch.iter().zip(&outcomes) {
            let view_label = out.label;
            for (i, r) in out.rollouts.iter().enumerate() {
                let mut features = None;
                let (composite, source, prediction) = match (&out.human_reward, &metarm) {
                    (Some(h), _) if self.scores_human(*stream) => {
                        (h[i], RewardSource::HumanCritique, None)
                    }
                    (_, Some(model)) if cfg.regime.uses_metarm() => {
                        let x = self.featurizer.featurize(view_label, r)?;
                        let p = model.predict(&x)?;
                        scoring_version = Some(model.version);
                        features = r.format_valid.then_some(x);
                        (
                            metarm_reward_with(
                                r.format_valid,
                                r.label_match(view_label),
                                p,
                                cfg.lambda,
                                cfg.outcome_regularization,
                            )?,
                            RewardSource::Metarm,
                            r.format_valid.then_some(p),
                        )
                    }
                    _ => (
                        outcome_reward(r, view_label)?,
                        RewardSource::OutcomeOnly,
                        None,
                    ),
                };
                rewards.push(RewardedRollout {
                    sample_id: sample.id.clone(),
                    stream: *stream,
                    record: RewardRecord {
                        outcome_correct: r.label_match(view_label),
                        format_valid: r.format_valid,
                        process_score: (source == RewardSource::HumanCritique)
                            .then_some(out.oracle_f1[i]),
                        composite,
                        source,
                    },
                    oracle_f1: out.oracle_f1[i],
                    oracle_reward: out.oracle_reward[i],
                    metarm_prediction: prediction,
                    metarm_features: features,
                    argument_count: r.argument_set.len(),
                });
            }
        }
        if scoring_version.is_some() && scoring_version != version_after_update {
            return Err(StepError::Invariant(format!(
                "D_O scored by MetaRM v{scoring_version:?}, phase 3 produced v{version_after_update:?}"
            )));
        }
        if rewards.len() != batch.len() * cfg.n_rollout {
            return Err(StepError::Invariant(format!(
                "{} rewarded rollouts for {} samples × {}",
                rewards.len(),
                batch.len(),
                cfg.n_rollout
            )));
        }
        timings.metarm_scoring = t0.elapsed().as_secs_f64();

        // (5)
        let t0 = Instant::now();
        let mut groups = Vec::with_capacity(batch.len());
        for (g, out) in outcomes.iter().enumerate() {
            let group_rewards: Vec<f64> = rewards[g * cfg.n_rollout..(g + 1) * cfg.n_rollout]
                .iter()
                .map(|r| r.record.composite)
                .collect();
            groups.push(RolloutGroup {
                rollouts: out.rollouts.clone(),
                advantages: group_advantages_with(&group_rewards, DEFAULT_STD_GUARD, cfg.std_mode)?,
            });
        }
        let surrogate_cfg = SurrogateConfig {
            epsilon: cfg.epsilon,
            beta: cfg.beta,
            temperature: cfg.temperature,
        };
        let clip = (cfg.grad_clip > 0.0).then_some(cfg.grad_clip);
        let mut policy = state.policy.clone();
        let mut surrogate = SurrogateStats::default();
        if !groups.is_empty() {
            for _ in 0..cfg.ppo_epochs {
                let out = surrogate_loss(&policy, &groups, &surrogate_cfg, &state.reference)?;
                if surrogate == SurrogateStats::default() {
                    surrogate = out.stats;
                }
                policy = policy_update(&policy, &out.gradient, cfg.policy_lr, clip)?;
            }
        }
        timings.policy_update = t0.elapsed().as_secs_f64();

        let metrics = step_metrics(step, &rewards);
        debug!(
            "step {step}: acc {:.3} f1 {:.3} mae {:?}",
            metrics.outcome_accuracy, metrics.mean_similarity_f1, metrics.metarm_mae_vs_oracle
        );
        let next = TrainingState {
            step: step + 1,
            policy,
            reference: state.reference.clone(),
            metarm,
        };
        let trace = StepTrace {
            metarm_version_at_start: version_at_start,
            metarm_version_after_update: version_after_update,
            metarm_version_for_scoring: scoring_version,
            metarm_targets: n_targets,
            rewards,
            surrogate,
            timings,
        };
        Ok((next, metrics, trace))
    }

    /// Phase-3 targets: this step's D_H rollouts, plus pseudo-labelled D_O rollouts when enabled.
    fn fresh_targets(
        &self,
        batch: &[(&PreferenceSample, Stream)],
        outcomes: &[SampleOutcome],
    ) -> Result<Vec<MetaRmTarget>, StepError> {
        let rules = self.rules();
        let mut targets = Vec::new();
        for ((_, stream), out) in batch.iter().zip(outcomes) {
            for (i, r) in out.rollouts.iter().enumerate() {
                let target = match (stream, &out.human_reward) {
                    (Stream::Dh, Some(h)) => {
                        target_for(&self.featurizer, out.label, r, h[i], &rules)?
                    }
                    (Stream::Do, _) if self.config.do_for_metarm && r.format_valid => {
                        let pseudo = if r.label_match(out.label) {
                            1.0 + self.config.lambda / 2.0
                        } else {
                            0.0
                        };
                        target_for(&self.featurizer, out.label, r, pseudo, &rules)?
                    }
                    _ => None,
                };
                targets.extend(target);
            }
        }
        Ok(targets)
    }

    /// Sampled rollouts of `policy` on fresh held-out samples, scored against gold.
    pub fn evaluate(&self, policy: &ToyPolicy, at_step: usize) -> Result<EvalSummary, StepError> {
        let cfg = &self.config;
        let mut env = self.env.clone();
        let held_out = env.draw_samples(
            cfg.eval_samples,
            "heldout-",
            0.0,
            derive(cfg.seed, &[SEED_EVAL]),
        );
        let per_sample: Vec<Vec<(bool, bool, f64, usize)>> = held_out
            .par_iter()
            .map(|s| {
                let view = env.view(&s.id, at_step)?;
                let seed = derive(cfg.seed, &[SEED_EVAL, tag(&s.id)]);
                Ok(rollout(
                    policy,
                    &s.id,
                    &view.evidence,
                    cfg.eval_rollouts,
                    cfg.temperature,
                    seed,
                )
                .iter()
                .map(|r| {
                    (
                        r.label_match(view.label),
                        r.format_valid,
                        compute_similarity(&view.gold, &r.argument_set, cfg.match_mode).f1,
                        r.argument_set.len(),
                    )
                })
                .collect())
            })
            .collect::<Result<_, StepError>>()?;
        let flat: Vec<_> = per_sample.into_iter().flatten().collect();
        let n = flat.len().max(1) as f64;
        let scored: Vec<ScoredOutcome> = flat
            .iter()
            .map(|&(c, _, f1, _)| ScoredOutcome {
                outcome_correct: c,
                similarity: f1,
            })
            .collect();
        let (p01, p10) = metrics::default_inconsistency(&scored);
        Ok(EvalSummary {
            samples: held_out.len(),
            rollouts: flat.len(),
            outcome_accuracy: flat.iter().filter(|x| x.0).count() as f64 / n,
            format_valid_rate: flat.iter().filter(|x| x.1).count() as f64 / n,
            mean_similarity_f1: flat.iter().map(|x| x.2).sum::<f64>() / n,
            p_process0_given_outcome1: p01,
            p_process1_given_outcome0: p10,
            mean_argument_count: flat.iter().map(|x| x.3 as f64).sum::<f64>() / n,
        })
    }
}

fn step_metrics(step: usize, rewards: &[RewardedRollout]) -> StepMetrics {
    let n = rewards.len().max(1) as f64;
    let scored: Vec<ScoredOutcome> = rewards
        .iter()
        .map(|r| ScoredOutcome {
            outcome_correct: r.record.outcome_correct,
            similarity: r.oracle_f1,
        })
        .collect();
    let (p01, p10) = metrics::default_inconsistency(&scored);
    let errors: Vec<f64> = rewards
        .iter()
        .filter_map(|r| r.metarm_prediction.map(|p| (p - r.oracle_reward).abs()))
        .collect();
    StepMetrics {
        step,
        outcome_accuracy: rewards.iter().filter(|r| r.record.outcome_correct).count() as f64 / n,
        mean_similarity_f1: rewards.iter().map(|r| r.oracle_f1).sum::<f64>() / n,
        metarm_mae_vs_oracle: (!errors.is_empty())
            .then(|| errors.iter().sum::<f64>() / errors.len() as f64),
        p_process0_given_outcome1: p01,
        p_process1_given_outcome0: p10,
        mean_argument_count: rewards.iter().map(|r| r.argument_count as f64).sum::<f64>() / n,
    }
}

#[derive(Debug, Serialize)]
struct FailureDump<'a> {
    step: usize,
    error: String,
    policy: &'a ToyPolicy,
    metarm: &'a Option<MetaRmModel>,
}

/// Run the configured number of steps, then the held-out evaluation. With `out`, also
/// writes `metrics.csv`, `timings.csv`, `config.txt`, `final_eval.json` and checkpoints.
pub fn run_experiment(
    config: &TrainConfig,
    env: &EnvironmentSpec,
    samples: &[PreferenceSample],
    scorer: &dyn CritiqueScorer,
    out: Option<&Path>,
) -> Result<RunOutput, RunError> {
    let trainer = Trainer::new(config.clone(), env, samples, scorer)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), config.to_text())?;
    }
    let mut state = trainer.initial_state().map_err(RunError::ColdStart)?;
    let cold_metarm = state.metarm.clone();
    let digest = config.digest();
    let mut metrics = Vec::with_capacity(config.steps);
    let mut timings = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = trainer.select_batch(step);
        match trainer.training_step(&state, &batch) {
            Ok((next, m, trace)) => {
                state = next;
                metrics.push(m);
                timings.push(trace.timings);
            }
            Err(source) => {
                if let Some(dir) = out {
                    let dump = FailureDump {
                        step,
                        error: source.to_string(),
                        policy: &state.policy,
                        metarm: &state.metarm,
                    };
                    fs::write(
                        dir.join("failure.json"),
                        serde_json::to_string_pretty(&dump)?,
                    )?;
                }
                return Err(RunError::Step { step, source });
            }
        }
        if let Some(dir) = out {
            if config.checkpoint_interval > 0 && state.step % config.checkpoint_interval == 0 {
                write_checkpoints(dir, &state, &digest, Some(state.step))?;
            }
        }
    }
    let final_eval = trainer
        .evaluate(&state.policy, config.steps)
        .map_err(RunError::Eval)?;
    info!(
        "{} seed {}: final acc {:.3} f1 {:.3}",
        config.regime, config.seed, final_eval.outcome_accuracy, final_eval.mean_similarity_f1
    );
    if let Some(dir) = out {
        write_metrics(dir, &metrics, &timings)?;
        fs::write(
            dir.join("final_eval.json"),
            serde_json::to_string_pretty(&final_eval)?,
        )?;
        write_checkpoints(dir, &state, &digest, None)?;
    }
    Ok(RunOutput {
        metrics,
        timings,
        final_eval,
        state,
        cold_metarm,
    })
}

fn write_metrics(
    dir: &Path,
    metrics: &[StepMetrics],
    timings: &[PhaseTimings],
) -> Result<(), RunError> {
    metrics::write_metrics_csv(
        BufWriter::new(File::create(dir.join("metrics.csv"))?),
        metrics,
    )?;
    metrics::write_timings_csv(
        BufWriter::new(File::create(dir.join("timings.csv"))?),
        timings,
    )?;
    Ok(())
}

fn checkpoint_path(dir: &Path, name: &str, step: Option<usize>) -> PathBuf {
    match step {
        Some(s) => dir.join(format!("{name}_step{s}.json")),
        None => dir.join(format!("{name}.json")),
    }
}

fn write_checkpoints(
    dir: &Path,
    state: &TrainingState,
    digest: &str,
    step: Option<usize>,
) -> Result<(), RunError> {
    PolicyCheckpoint::new(&state.policy, digest, state.step)
        .save(checkpoint_path(dir, "policy", step))?;
    if let Some(m) = &state.metarm {
        m.save(checkpoint_path(dir, "metarm", step))
            .map_err(RunError::MetaRmCheckpoint)?;
    }
    Ok(())
}
