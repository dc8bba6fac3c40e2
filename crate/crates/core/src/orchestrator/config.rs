//! Training configuration, read from and echoed to flat `key = value` text.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::environment::GeneratorConfig;
use crate::metarm::MetaRmVariant;
use crate::reward::StdMode;
use crate::similarity::MatchMode;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {value:?}")]
    BadValue { key: String, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    OutcomeOnly,
    /// Process reward on D_H only, plain outcome reward on D_O.
    Naive,
    OfflineMetarm,
    OnlineMetarm,
    FullHumanCritique,
    /// Every rollout rewarded by the MetaRM; human critiques only train it.
    OnlyMetarm,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::OutcomeOnly,
        Regime::Naive,
        Regime::OfflineMetarm,
        Regime::OnlineMetarm,
        Regime::FullHumanCritique,
        Regime::OnlyMetarm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::OutcomeOnly => "outcome_only",
            Regime::Naive => "naive",
            Regime::OfflineMetarm => "offline_metarm",
            Regime::OnlineMetarm => "online_metarm",
            Regime::FullHumanCritique => "full_human_critique",
            Regime::OnlyMetarm => "only_metarm",
        }
    }

    pub fn uses_metarm(self) -> bool {
        matches!(
            self,
            Regime::OfflineMetarm | Regime::OnlineMetarm | Regime::OnlyMetarm
        )
    }

    pub fn updates_metarm(self) -> bool {
        matches!(self, Regime::OnlineMetarm | Regime::OnlyMetarm)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "human_critique_only_on_dh" {
            return Ok(Regime::Naive);
        }
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown regime {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regime: Regime,
    pub seed: u64,
    pub steps: usize,
    pub lambda: f64,
    pub n_rollout: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub temperature: f64,
    pub policy_lr: f64,
    /// Inner passes over each rollout batch; 1 keeps ratios at 1 on the first pass.
    pub ppo_epochs: usize,
    /// 0 disables gradient-norm clipping.
    pub grad_clip: f64,
    pub garble_fraction: f64,
    pub batch_size: usize,
    /// Fraction of each batch drawn from D_H.
    pub dh_ratio: f64,
    pub metarm_variant: MetaRmVariant,
    pub metarm_cold_lr: f64,
    pub metarm_online_lr: f64,
    pub metarm_cold_epochs: usize,
    pub metarm_online_epochs: usize,
    /// 0 trains full-batch.
    pub metarm_batch_size: usize,
    pub cold_start_rollouts: usize,
    /// Doubles the online learning rate and runs two epochs per round.
    pub aggressive: bool,
    pub outcome_regularization: bool,
    pub do_for_metarm: bool,
    pub include_invalid_targets: bool,
    pub match_mode: MatchMode,
    pub std_mode: StdMode,
    pub eval_samples: usize,
    pub eval_rollouts: usize,
    /// 0 writes checkpoints only at the end.
    pub checkpoint_interval: usize,
    pub env: GeneratorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::OnlineMetarm,
            seed: 0,
            steps: 100,
            lambda: 0.5,
            n_rollout: 8,
            epsilon: 0.2,
            beta: 0.001,
            temperature: 0.7,
            policy_lr: 1.0,
            ppo_epochs: 1,
            grad_clip: 0.0,
            garble_fraction: 0.05,
            batch_size: 16,
            dh_ratio: 0.5,
            metarm_variant: MetaRmVariant::Regression,
            metarm_cold_lr: 0.1,
            metarm_online_lr: 0.05,
            metarm_cold_epochs: 3,
            metarm_online_epochs: 1,
            metarm_batch_size: 8,
            cold_start_rollouts: 8,
            aggressive: false,
            outcome_regularization: true,
            do_for_metarm: false,
            include_invalid_targets: false,
            match_mode: MatchMode::Core,
            std_mode: StdMode::Population,
            eval_samples: 200,
            eval_rollouts: 8,
            checkpoint_interval: 0,
            env: GeneratorConfig::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_enum<T: serde::de::DeserializeOwned>(key: &str, value: &str) -> Result<T, ConfigError> {
    serde_json::from_value(serde_json::Value::String(value.to_string())).map_err(|_| {
        ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        }
    })
}

fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => unreachable!("unit enums serialize to strings"),
    }
}

fn parse_steps(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

impl TrainConfig {
    /// Learning rates and step count sized for runs on real models.
    pub fn full_scale() -> Self {
        TrainConfig {
            steps: 1200,
            policy_lr: 1e-6,
            metarm_cold_lr: 1e-5,
            metarm_online_lr: 5e-6,
            metarm_batch_size: 0,
            ..TrainConfig::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value;
        match key {
            "regime" => self.regime = v.parse().map_err(|_| bad(key, v))?,
            "seed" => self.seed = parse_value(key, v)?,
            "steps" => self.steps = parse_value(key, v)?,
            "lambda" => self.lambda = parse_value(key, v)?,
            "n_rollout" => self.n_rollout = parse_value(key, v)?,
            "epsilon" => self.epsilon = parse_value(key, v)?,
            "beta" => self.beta = parse_value(key, v)?,
            "temperature" => self.temperature = parse_value(key, v)?,
            "policy_lr" => self.policy_lr = parse_value(key, v)?,
            "ppo_epochs" => self.ppo_epochs = parse_value(key, v)?,
            "grad_clip" => self.grad_clip = parse_value(key, v)?,
            "garble_fraction" => self.garble_fraction = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "dh_ratio" => self.dh_ratio = parse_value(key, v)?,
            "metarm_variant" => self.metarm_variant = parse_enum(key, v)?,
            "metarm_cold_lr" => self.metarm_cold_lr = parse_value(key, v)?,
            "metarm_online_lr" => self.metarm_online_lr = parse_value(key, v)?,
            "metarm_cold_epochs" => self.metarm_cold_epochs = parse_value(key, v)?,
            "metarm_online_epochs" => self.metarm_online_epochs = parse_value(key, v)?,
            "metarm_batch_size" => self.metarm_batch_size = parse_value(key, v)?,
            "cold_start_rollouts" => self.cold_start_rollouts = parse_value(key, v)?,
            "aggressive" => self.aggressive = parse_value(key, v)?,
            "outcome_regularization" => self.outcome_regularization = parse_value(key, v)?,
            "do_for_metarm" => self.do_for_metarm = parse_value(key, v)?,
            "include_invalid_targets" => self.include_invalid_targets = parse_value(key, v)?,
            "match_mode" => self.match_mode = parse_enum(key, v)?,
            "std_mode" => self.std_mode = parse_enum(key, v)?,
            "eval_samples" => self.eval_samples = parse_value(key, v)?,
            "eval_rollouts" => self.eval_rollouts = parse_value(key, v)?,
            "checkpoint_interval" => self.checkpoint_interval = parse_value(key, v)?,
            "env.universe_size" => self.env.universe_size = parse_value(key, v)?,
            "env.n_samples" => self.env.n_samples = parse_value(key, v)?,
            "env.fraction_with_critique" => self.env.fraction_with_critique = parse_value(key, v)?,
            "env.fatal_slots" => self.env.fatal_slots = parse_value(key, v)?,
            "env.context_noise" => self.env.context_noise = parse_value(key, v)?,
            "env.inclusion_high" => self.env.inclusion_high = parse_value(key, v)?,
            "env.inclusion_low" => self.env.inclusion_low = parse_value(key, v)?,
            "env.shift_steps" => self.env.shift_steps = parse_steps(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Every field as `(key, value)`, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let steps: Vec<String> = self.env.shift_steps.iter().map(usize::to_string).collect();
        vec![
            ("regime", self.regime.to_string()),
            ("seed", self.seed.to_string()),
            ("steps", self.steps.to_string()),
            ("lambda", self.lambda.to_string()),
            ("n_rollout", self.n_rollout.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("beta", self.beta.to_string()),
            ("temperature", self.temperature.to_string()),
            ("policy_lr", self.policy_lr.to_string()),
            ("ppo_epochs", self.ppo_epochs.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
            ("garble_fraction", self.garble_fraction.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("dh_ratio", self.dh_ratio.to_string()),
            ("metarm_variant", enum_name(&self.metarm_variant)),
            ("metarm_cold_lr", self.metarm_cold_lr.to_string()),
            ("metarm_online_lr", self.metarm_online_lr.to_string()),
            ("metarm_cold_epochs", self.metarm_cold_epochs.to_string()),
            (
                "metarm_online_epochs",
                self.metarm_online_epochs.to_string(),
            ),
            ("metarm_batch_size", self.metarm_batch_size.to_string()),
            ("cold_start_rollouts", self.cold_start_rollouts.to_string()),
            ("aggressive", self.aggressive.to_string()),
            (
                "outcome_regularization",
                self.outcome_regularization.to_string(),
            ),
            ("do_for_metarm", self.do_for_metarm.to_string()),
            (
                "include_invalid_targets",
                self.include_invalid_targets.to_string(),
            ),
            ("match_mode", enum_name(&self.match_mode)),
            ("std_mode", enum_name(&self.std_mode)),
            ("eval_samples", self.eval_samples.to_string()),
            ("eval_rollouts", self.eval_rollouts.to_string()),
            ("checkpoint_interval", self.checkpoint_interval.to_string()),
            ("env.universe_size", self.env.universe_size.to_string()),
            ("env.n_samples", self.env.n_samples.to_string()),
            (
                "env.fraction_with_critique",
                self.env.fraction_with_critique.to_string(),
            ),
            ("env.fatal_slots", self.env.fatal_slots.to_string()),
            ("env.context_noise", self.env.context_noise.to_string()),
            ("env.inclusion_high", self.env.inclusion_high.to_string()),
            ("env.inclusion_low", self.env.inclusion_low.to_string()),
            ("env.shift_steps", steps.join(",")),
        ]
    }

    /// Apply `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = TrainConfig::default();
        config.apply(text)?;
        Ok(config)
    }

    pub fn apply(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// sha256 of the canonical echo.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn effective_online_lr(&self) -> f64 {
        if self.aggressive {
            2.0 * self.metarm_online_lr
        } else {
            self.metarm_online_lr
        }
    }

    pub fn effective_online_epochs(&self) -> usize {
        if self.aggressive {
            2
        } else {
            self.metarm_online_epochs
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let rates = [
            self.policy_lr,
            self.metarm_cold_lr,
            self.metarm_online_lr,
            self.temperature,
            self.epsilon,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return fail("learning rates, temperature and epsilon must be > 0");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail("lambda must be in [0, 1]");
        }
        if !(self.beta >= 0.0) {
            return fail("beta must be >= 0");
        }
        if self.n_rollout == 0 || self.batch_size == 0 || self.ppo_epochs == 0 {
            return fail("n_rollout, batch_size and ppo_epochs must be >= 1");
        }
        if self.metarm_cold_epochs == 0
            || self.metarm_online_epochs == 0
            || self.cold_start_rollouts == 0
        {
            return fail("MetaRM epochs and cold_start_rollouts must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.dh_ratio) {
            return fail("dh_ratio must be in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.garble_fraction) {
            return fail("garble_fraction must be in [0, 1)");
        }
        if !(self.grad_clip >= 0.0) {
            return fail("grad_clip must be >= 0");
        }
        self.env
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

fn bad(key: &str, value: &str) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    }
}
