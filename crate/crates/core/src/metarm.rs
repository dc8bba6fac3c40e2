//! The meta reward model: a linear head over hand-built critique features that predicts
//! the composite reward a human-critique comparison would have assigned.
//!
//! Training fits the unclamped score; only inference clamps to `[0, 1 + λ]`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::EnvironmentSpec;
use crate::judge::JudgeError;
use crate::policy::{rollout, RolloutRecord, ToyPolicy};
use crate::preference::{ArgumentSet, Choice, Polarity, PreferenceSample};
use crate::reward::{composite_reward, process_reward, RewardError};
use crate::similarity::{repeated_argument_check, CritiqueScorer};

pub const CHECKPOINT_FORMAT: &str = "nlhf-metarm";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MetaRmError {
    #[error("feature error: argument key {0:?} is not in the universe")]
    UnknownArgument(String),
    #[error("dimension mismatch: model expects {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite MetaRM loss")]
    NonFinite,
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaRmVariant {
    #[default]
    Regression,
    /// Regression head whose output is snapped to `{0, 1 + λ}` at the midpoint.
    Binary,
    /// Three-way head over invalid-like / wrong-like / correct-like targets.
    Classifier,
}

/// Maps a rollout's critique onto a fixed-length feature vector:
/// `[1, label_match, (slot × polarity) one-hot ..., count / U, repeated]`.
#[derive(Debug, Clone)]
pub struct Featurizer {
    universe_size: usize,
    slot_of: HashMap<String, usize>,
}

impl Featurizer {
    pub fn new(env: &EnvironmentSpec) -> Self {
        Featurizer {
            universe_size: env.universe_size(),
            slot_of: env
                .argument_universe
                .iter()
                .enumerate()
                .map(|(k, a)| (a.content_key.clone(), k))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.universe_size + 4
    }

    pub fn featurize_critique(
        &self,
        label_match: bool,
        critique: &ArgumentSet,
    ) -> Result<Vec<f64>, MetaRmError> {
        let u = self.universe_size;
        let mut x = vec![0.0; self.dim()];
        x[0] = 1.0;
        x[1] = f64::from(u8::from(label_match));
        for arg in critique.iter() {
            let slot = *self
                .slot_of
                .get(&arg.content_key)
                .ok_or_else(|| MetaRmError::UnknownArgument(arg.content_key.clone()))?;
            let offset = match arg.polarity {
                Polarity::Positive => 0,
                Polarity::Negative => 1,
            };
            x[2 + 2 * slot + offset] = 1.0;
        }
        x[2 + 2 * u] = critique.len() as f64 / u as f64;
        x[3 + 2 * u] = f64::from(u8::from(repeated_argument_check(critique)));
        Ok(x)
    }

    pub fn featurize(
        &self,
        gold_label: Choice,
        rollout: &RolloutRecord,
    ) -> Result<Vec<f64>, MetaRmError> {
        self.featurize_critique(rollout.label_match(gold_label), &rollout.argument_set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRmTarget {
    pub features: Vec<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRmModel {
    pub dim: usize,
    pub lambda: f64,
    pub variant: MetaRmVariant,
    /// `dim` weights, or `3 × dim` (class-major) for the classifier.
    pub weights: Vec<f64>,
    /// Bumped on every training round; identifies snapshots.
    #[serde(default)]
    pub version: u64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl MetaRmModel {
    pub fn new(dim: usize, lambda: f64, variant: MetaRmVariant) -> Self {
        let n = match variant {
            MetaRmVariant::Classifier => 3 * dim,
            _ => dim,
        };
        MetaRmModel {
            dim,
            lambda,
            variant,
            weights: vec![0.0; n],
            version: 0,
        }
    }

    pub fn upper(&self) -> f64 {
        1.0 + self.lambda
    }

    /// Values the classifier's three classes stand for.
    pub fn class_values(&self) -> [f64; 3] {
        [-1.0, 0.0, self.upper()]
    }

    /// Class of a training target: invalid-like, wrong-like or correct-like.
    pub fn class_of(target: f64) -> usize {
        if target < -0.5 {
            0
        } else if target < 0.5 {
            1
        } else {
            2
        }
    }

    fn check_dim(&self, features: &[f64]) -> Result<(), MetaRmError> {
        if features.len() == self.dim {
            Ok(())
        } else {
            Err(MetaRmError::Shape {
                expected: self.dim,
                got: features.len(),
            })
        }
    }

    fn class_probs(&self, features: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = (0..3)
            .map(|c| dot(&self.weights[c * self.dim..(c + 1) * self.dim], features))
            .collect();
        softmax(&z)
    }

    /// The unclamped score the training loss sees (expected class value for the classifier).
    pub fn raw_score(&self, features: &[f64]) -> Result<f64, MetaRmError> {
        self.check_dim(features)?;
        Ok(match self.variant {
            MetaRmVariant::Classifier => dot(&self.class_probs(features), &self.class_values()),
            _ => dot(&self.weights, features),
        })
    }

    pub fn predict(&self, features: &[f64]) -> Result<f64, MetaRmError> {
        let raw = self.raw_score(features)?;
        let upper = self.upper();
        Ok(match self.variant {
            MetaRmVariant::Binary => {
                if raw >= 0.5 * upper {
                    upper
                } else {
                    0.0
                }
            }
            _ => raw.clamp(0.0, upper),
        })
    }

    /// Training loss and its gradient: mean squared error for regression heads,
    /// mean cross-entropy for the classifier.
    pub fn loss_and_gradient(
        &self,
        targets: &[MetaRmTarget],
    ) -> Result<(f64, Vec<f64>), MetaRmError> {
        let mut grad = vec![0.0; self.weights.len()];
        if targets.is_empty() {
            return Ok((0.0, grad));
        }
        let n = targets.len() as f64;
        let mut loss = 0.0;
        for t in targets {
            self.check_dim(&t.features)?;
            match self.variant {
                MetaRmVariant::Classifier => {
                    let p = self.class_probs(&t.features);
                    let y = Self::class_of(t.target);
                    loss -= p[y].max(f64::MIN_POSITIVE).ln();
                    for c in 0..3 {
                        let coeff = p[c] - if c == y { 1.0 } else { 0.0 };
                        for (g, x) in grad[c * self.dim..(c + 1) * self.dim]
                            .iter_mut()
                            .zip(&t.features)
                        {
                            *g += coeff * x;
                        }
                    }
                }
                _ => {
                    let err = dot(&self.weights, &t.features) - t.target;
                    loss += err * err;
                    for (g, x) in grad.iter_mut().zip(&t.features) {
                        *g += 2.0 * err * x;
                    }
                }
            }
        }
        for g in &mut grad {
            *g /= n;
        }
        Ok((loss / n, grad))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MetaRmError> {
        let doc = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        let text = serde_json::to_string_pretty(&doc)
            .map_err(|e| MetaRmError::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|e| MetaRmError::Checkpoint(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MetaRmError> {
        let text = fs::read_to_string(path).map_err(|e| MetaRmError::Checkpoint(e.to_string()))?;
        let doc: Checkpoint =
            serde_json::from_str(&text).map_err(|e| MetaRmError::Checkpoint(e.to_string()))?;
        if doc.format != CHECKPOINT_FORMAT || doc.version != CHECKPOINT_VERSION {
            return Err(MetaRmError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                doc.format, doc.version
            )));
        }
        let expected = match doc.model.variant {
            MetaRmVariant::Classifier => 3 * doc.model.dim,
            _ => doc.model.dim,
        };
        if doc.model.weights.len() != expected {
            return Err(MetaRmError::Shape {
                expected,
                got: doc.model.weights.len(),
            });
        }
        Ok(doc.model)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: MetaRmModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

/// Gradient descent on the training loss. Returns a new model; the input is untouched.
pub fn mse_train(
    model: &MetaRmModel,
    targets: &[MetaRmTarget],
    settings: &TrainSettings,
) -> Result<MetaRmModel, MetaRmError> {
    if targets.is_empty() {
        return Err(MetaRmError::Precondition("no training targets".into()));
    }
    if settings.epochs == 0 {
        return Err(MetaRmError::Precondition("epochs must be >= 1".into()));
    }
    let mut next = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let batch = settings
        .batch_size
        .unwrap_or(targets.len())
        .clamp(1, targets.len());
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let mut scratch = Vec::with_capacity(batch);
    for _ in 0..settings.epochs {
        if batch < targets.len() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            scratch.clear();
            scratch.extend(chunk.iter().map(|&i| targets[i].clone()));
            let (loss, grad) = next.loss_and_gradient(&scratch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(MetaRmError::NonFinite);
            }
            for (w, g) in next.weights.iter_mut().zip(&grad) {
                *w -= settings.learning_rate * g;
            }
        }
    }
    if next.weights.iter().any(|w| !w.is_finite()) {
        return Err(MetaRmError::NonFinite);
    }
    next.version = model.version + 1;
    Ok(next)
}

/// One online round on fresh targets. No targets means no change.
pub fn online_update(
    model: &MetaRmModel,
    fresh_targets: &[MetaRmTarget],
    learning_rate: f64,
    epochs_per_round: usize,
    batch_size: Option<usize>,
    seed: u64,
) -> Result<MetaRmModel, MetaRmError> {
    if fresh_targets.is_empty() {
        return Ok(model.clone());
    }
    mse_train(
        model,
        fresh_targets,
        &TrainSettings {
            epochs: epochs_per_round,
            learning_rate,
            batch_size,
            seed,
        },
    )
}

/// One human-critique stream sample as the MetaRM pipeline sees it.
#[derive(Debug, Clone, Copy)]
pub struct CritiqueItem<'a> {
    pub sample: &'a PreferenceSample,
    pub reference: &'a ArgumentSet,
    pub label: Choice,
    pub evidence: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetRules {
    pub lambda: f64,
    pub regularized: bool,
    /// Keep format-invalid rollouts as `-1` targets instead of dropping them.
    pub include_invalid: bool,
}

/// Composite reward of a rollout scored against its human critique.
pub fn human_critique_reward(
    scorer: &dyn CritiqueScorer,
    item: &CritiqueItem<'_>,
    rollout: &RolloutRecord,
    rules: &TargetRules,
) -> Result<(f64, f64), MetaRmError> {
    let scores = scorer.score(item.sample, item.reference, &rollout.argument_set)?;
    let r = process_reward(scores.f1)?;
    let reward = composite_reward(
        rollout.format_valid,
        rollout.label_match(item.label),
        Some(r),
        rules.lambda,
        rules.regularized,
    )?;
    Ok((scores.f1, reward))
}

pub fn target_for(
    featurizer: &Featurizer,
    label: Choice,
    rollout: &RolloutRecord,
    reward: f64,
    rules: &TargetRules,
) -> Result<Option<MetaRmTarget>, MetaRmError> {
    if !rollout.format_valid && !rules.include_invalid {
        return Ok(None);
    }
    Ok(Some(MetaRmTarget {
        features: featurizer.featurize(label, rollout)?,
        target: reward,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColdStartConfig {
    pub n_sample: usize,
    pub temperature: f64,
    pub rules: TargetRules,
    pub variant: MetaRmVariant,
    pub train: TrainSettings,
}

/// Fit a fresh MetaRM on rollouts of `policy` over the human-critique stream.
pub fn cold_start(
    policy: &ToyPolicy,
    d_h: &[CritiqueItem<'_>],
    featurizer: &Featurizer,
    scorer: &dyn CritiqueScorer,
    config: &ColdStartConfig,
) -> Result<(MetaRmModel, Vec<MetaRmTarget>), MetaRmError> {
    if d_h.is_empty() {
        return Err(MetaRmError::Precondition(
            "cold start needs a non-empty D_H".into(),
        ));
    }
    if let Some(item) = d_h.iter().find(|i| !i.sample.has_critique()) {
        return Err(MetaRmError::Precondition(format!(
            "sample {} has no human critique",
            item.sample.id
        )));
    }
    let mut targets = Vec::with_capacity(d_h.len() * config.n_sample);
    for (i, item) in d_h.iter().enumerate() {
        let seed = crate::seeds::derive(config.train.seed, &[0xC01D, i as u64]);
        for r in rollout(
            policy,
            &item.sample.id,
            item.evidence,
            config.n_sample,
            config.temperature,
            seed,
        ) {
            let (_, reward) = human_critique_reward(scorer, item, &r, &config.rules)?;
            if let Some(t) = target_for(featurizer, item.label, &r, reward, &config.rules)? {
                targets.push(t);
            }
        }
    }
    let fresh = MetaRmModel::new(featurizer.dim(), config.rules.lambda, config.variant);
    if targets.is_empty() {
        return Ok((fresh, targets));
    }
    let model = mse_train(&fresh, &targets, &config.train)?;
    Ok((model, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{generate_environment, GeneratorConfig};
    use crate::preference::Argument;

    fn env(u: usize) -> EnvironmentSpec {
        generate_environment(
            &GeneratorConfig {
                universe_size: u,
                n_samples: 4,
                ..GeneratorConfig::default()
            },
            1,
        )
        .unwrap()
        .0
    }

    #[test]
    fn featurize_layout() {
        let f = Featurizer::new(&env(4));
        assert_eq!(f.dim(), 12);
        let x = f.featurize_critique(true, &ArgumentSet::default()).unwrap();
        assert_eq!(x[0], 1.0);
        assert_eq!(x[1], 1.0);
        assert!(x[2..].iter().all(|&v| v == 0.0));

        let critique = ArgumentSet::new(vec![
            Argument::new("arg0", Choice::A, Polarity::Positive),
            Argument::new("arg2", Choice::A, Polarity::Positive),
        ]);
        let x = f.featurize_critique(false, &critique).unwrap();
        assert_eq!(x[2..10].iter().filter(|&&v| v == 1.0).count(), 2);
        assert_eq!((x[2], x[6]), (1.0, 1.0));
        assert_eq!(x[10], 0.5);
        assert_eq!(x[1], 0.0);

        let unknown = ArgumentSet::new(vec![Argument::new("zzz", Choice::A, Polarity::Positive)]);
        assert!(matches!(
            f.featurize_critique(true, &unknown),
            Err(MetaRmError::UnknownArgument(_))
        ));
    }

    #[test]
    fn predict_clamps_and_thresholds() {
        let zero = MetaRmModel::new(3, 0.5, MetaRmVariant::Regression);
        assert_eq!(zero.predict(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let mut m = MetaRmModel::new(1, 0.5, MetaRmVariant::Regression);
        m.weights = vec![2.4];
        assert_eq!(m.predict(&[1.0]).unwrap(), 1.5);
        m.variant = MetaRmVariant::Binary;
        assert_eq!(m.predict(&[1.0]).unwrap(), 1.5);
        m.weights = vec![0.7];
        assert_eq!(m.predict(&[1.0]).unwrap(), 0.0);
        assert!(matches!(
            m.predict(&[1.0, 1.0]),
            Err(MetaRmError::Shape { .. })
        ));
    }

    fn settings(epochs: usize, lr: f64) -> TrainSettings {
        TrainSettings {
            epochs,
            learning_rate: lr,
            batch_size: None,
            seed: 0,
        }
    }

    #[test]
    fn single_target_converges() {
        let m = MetaRmModel::new(2, 0.5, MetaRmVariant::Regression);
        let t = vec![MetaRmTarget {
            features: vec![1.0, 0.5],
            target: 1.3,
        }];
        let trained = mse_train(&m, &t, &settings(500, 0.2)).unwrap();
        assert!((trained.predict(&t[0].features).unwrap() - 1.3).abs() < 1e-3);
        assert_eq!(m.weights, vec![0.0, 0.0]);
        assert_eq!(trained.version, 1);
    }

    #[test]
    fn contradictory_targets_meet_in_the_middle() {
        let m = MetaRmModel::new(2, 0.5, MetaRmVariant::Regression);
        let t = vec![
            MetaRmTarget {
                features: vec![1.0, 1.0],
                target: 0.2,
            },
            MetaRmTarget {
                features: vec![1.0, 1.0],
                target: 1.4,
            },
        ];
        let trained = mse_train(&m, &t, &settings(1000, 0.1)).unwrap();
        assert!((trained.raw_score(&[1.0, 1.0]).unwrap() - 0.8).abs() < 1e-3);
    }

    #[test]
    fn empty_online_round_is_noop_and_errors_surface() {
        let m = MetaRmModel::new(2, 0.5, MetaRmVariant::Regression);
        assert_eq!(online_update(&m, &[], 0.1, 1, None, 0).unwrap(), m);
        assert!(mse_train(&m, &[], &settings(1, 0.1)).is_err());
        let t = vec![MetaRmTarget {
            features: vec![1e200, 1e200],
            target: 1.0,
        }];
        assert!(matches!(
            mse_train(&m, &t, &settings(3, 1.0)),
            Err(MetaRmError::NonFinite)
        ));
    }

    #[test]
    fn classifier_values_and_classes() {
        let m = MetaRmModel::new(2, 0.5, MetaRmVariant::Classifier);
        assert_eq!(m.weights.len(), 6);
        // uniform classes: (-1 + 0 + 1.5) / 3
        assert!((m.raw_score(&[1.0, 0.0]).unwrap() - 0.5 / 3.0).abs() < 1e-12);
        assert_eq!(MetaRmModel::class_of(-1.0), 0);
        assert_eq!(MetaRmModel::class_of(0.0), 1);
        assert_eq!(MetaRmModel::class_of(1.0), 2);
        assert_eq!(MetaRmModel::class_of(1.5), 2);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut m = MetaRmModel::new(4, 0.3, MetaRmVariant::Classifier);
        m.weights[5] = 0.25;
        m.save(&path).unwrap();
        assert_eq!(MetaRmModel::load(&path).unwrap(), m);
    }
}
