//! Synthetic critique environment with known gold arguments.
//!
//! Every sample owns a gold critique drawn from a fixed argument universe. The gold label
//! follows from the gold arguments (more net support wins, ties go to A), and the
//! "responses" the policy observes are a noisy evidence vector over universe slots. A
//! shift schedule permutes slot contents at given training steps.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preference::{Argument, ArgumentSet, Choice, Polarity, PreferenceSample};

#[derive(Debug, Error)]
pub enum EnvironmentError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("unknown sample id {0}")]
    UnknownSample(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("environment file: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub universe_size: usize,
    pub n_samples: usize,
    pub fraction_with_critique: f64,
    /// Number of universe slots flagged as fatal errors.
    pub fatal_slots: usize,
    /// Probability that one evidence entry is flipped in the observed context.
    pub context_noise: f64,
    /// Gold inclusion probabilities are spread evenly over this range, then shuffled.
    pub inclusion_high: f64,
    pub inclusion_low: f64,
    /// Training steps at which a fresh universe permutation takes effect.
    pub shift_steps: Vec<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            universe_size: 6,
            n_samples: 200,
            fraction_with_critique: 0.5,
            fatal_slots: 1,
            context_noise: 0.1,
            inclusion_high: 0.75,
            inclusion_low: 0.15,
            shift_steps: Vec::new(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), EnvironmentError> {
        let fail = |m: &str| Err(EnvironmentError::Config(m.to_string()));
        if self.universe_size < 2 {
            return fail("universe_size must be >= 2");
        }
        if self.n_samples < 1 {
            return fail("n_samples must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.fraction_with_critique) {
            return fail("fraction_with_critique must be in [0, 1]");
        }
        if self.fatal_slots > self.universe_size {
            return fail("fatal_slots must not exceed universe_size");
        }
        if !(0.0..=0.5).contains(&self.context_noise) {
            return fail("context_noise must be in [0, 0.5]");
        }
        let rates_ok = |r: f64| r > 0.0 && r <= 1.0;
        if !rates_ok(self.inclusion_high)
            || !rates_ok(self.inclusion_low)
            || self.inclusion_low > self.inclusion_high
        {
            return fail("inclusion rates must satisfy 0 < low <= high <= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftEvent {
    pub step: usize,
    /// `permutation[k]` is the slot that slot `k`'s content moves to.
    pub permutation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    /// Universe slots in the gold critique, before any shift.
    pub slots: Vec<usize>,
    /// Which evidence entries the observed context reports wrongly.
    pub flips: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub argument_universe: Vec<Argument>,
    pub inclusion_rates: Vec<f64>,
    pub context_noise: f64,
    pub gold: BTreeMap<String, GoldRecord>,
    pub shift_schedule: Vec<ShiftEvent>,
}

/// What the environment says about one sample at one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleView {
    pub gold: ArgumentSet,
    pub label: Choice,
    /// One evidence entry per slot, +1 (present) or -1 (absent), noise included.
    pub evidence: Vec<f64>,
}

/// Canonical content key of universe slot `k`.
pub fn slot_key(k: usize) -> String {
    format!("arg{k}")
}

/// Slots alternate between speaking about response A (even) and response B (odd).
pub fn slot_target(k: usize) -> Choice {
    if k % 2 == 0 {
        Choice::A
    } else {
        Choice::B
    }
}

/// Net-support rule: the response with more net-positive arguments wins, ties go to A.
pub fn label_from_arguments(arguments: &ArgumentSet) -> Choice {
    let net: i64 = arguments
        .iter()
        .map(|a| if a.supports() == Choice::A { 1 } else { -1 })
        .sum();
    if net >= 0 {
        Choice::A
    } else {
        Choice::B
    }
}

impl EnvironmentSpec {
    pub fn universe_size(&self) -> usize {
        self.argument_universe.len()
    }

    /// Composite slot permutation in force at `step` (identity before the first shift).
    pub fn permutation_at(&self, step: usize) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.universe_size()).collect();
        for event in self.shift_schedule.iter().filter(|e| e.step <= step) {
            perm = perm.iter().map(|&p| event.permutation[p]).collect();
        }
        perm
    }

    pub fn view(&self, id: &str, step: usize) -> Result<SampleView, EnvironmentError> {
        let record = self
            .gold
            .get(id)
            .ok_or_else(|| EnvironmentError::UnknownSample(id.to_string()))?;
        Ok(self.view_record(record, &self.permutation_at(step)))
    }

    fn view_record(&self, record: &GoldRecord, perm: &[usize]) -> SampleView {
        let u = self.universe_size();
        let mut slots: Vec<usize> = record.slots.iter().map(|&k| perm[k]).collect();
        slots.sort_unstable();
        let gold: ArgumentSet = slots
            .iter()
            .map(|&k| self.argument_universe[k].clone())
            .collect();
        let mut evidence = vec![-1.0; u];
        for (k, &flip) in record.flips.iter().enumerate() {
            let present = record.slots.contains(&k);
            if present != flip {
                evidence[perm[k]] = 1.0;
            }
        }
        SampleView {
            label: label_from_arguments(&gold),
            gold,
            evidence,
        }
    }

    /// Draw fresh samples from the same universe, e.g. a held-out evaluation set.
    /// Ids are `<prefix><index>`; new gold records are added to the environment.
    pub fn draw_samples(
        &mut self,
        n: usize,
        prefix: &str,
        fraction_with_critique: f64,
        seed: u64,
    ) -> Vec<PreferenceSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = self.universe_size();
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let slots = loop {
                let slots: Vec<usize> = (0..u)
                    .filter(|&k| rng.gen_bool(self.inclusion_rates[k]))
                    .collect();
                if !slots.is_empty() {
                    break slots;
                }
            };
            let flips = (0..u).map(|_| rng.gen_bool(self.context_noise)).collect();
            records.push(GoldRecord { slots, flips });
        }
        let n_critique = (fraction_with_critique * n as f64).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut with_critique = vec![false; n];
        for &i in order.iter().take(n_critique) {
            with_critique[i] = true;
        }

        let identity: Vec<usize> = (0..u).collect();
        let mut samples = Vec::with_capacity(n);
        for (i, record) in records.into_iter().enumerate() {
            let id = format!("{prefix}{i}");
            let view = self.view_record(&record, &identity);
            samples.push(PreferenceSample {
                id: id.clone(),
                query: format!("Synthetic query {id}: compare the two responses."),
                response_a: format!("Synthetic response A for {id}."),
                response_b: format!("Synthetic response B for {id}."),
                label: view.label,
                human_critique_text: with_critique[i].then(|| view.gold.to_text()),
                human_critique: with_critique[i].then(|| view.gold.clone()),
            });
            self.gold.insert(id, record);
        }
        samples
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EnvironmentError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnvironmentError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Build a universe, gold critiques and the sample list. Deterministic in `(config, seed)`.
pub fn generate_environment(
    config: &GeneratorConfig,
    seed: u64,
) -> Result<(EnvironmentSpec, Vec<PreferenceSample>), EnvironmentError> {
    config.validate()?;
    let u = config.universe_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut fatal = vec![false; u];
    let mut slots: Vec<usize> = (0..u).collect();
    slots.shuffle(&mut rng);
    for &k in slots.iter().take(config.fatal_slots) {
        fatal[k] = true;
    }
    let argument_universe = (0..u)
        .map(|k| {
            let polarity = if rng.gen_bool(0.5) {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            Argument {
                content_key: slot_key(k),
                target: slot_target(k),
                polarity,
                fatal: fatal[k],
            }
        })
        .collect();

    let mut inclusion_rates: Vec<f64> = (0..u)
        .map(|k| {
            let t = k as f64 / (u - 1) as f64;
            config.inclusion_high + t * (config.inclusion_low - config.inclusion_high)
        })
        .collect();
    inclusion_rates.shuffle(&mut rng);

    let mut shift_schedule = Vec::new();
    let mut steps = config.shift_steps.clone();
    steps.sort_unstable();
    steps.dedup();
    for step in steps {
        let identity: Vec<usize> = (0..u).collect();
        let mut permutation = identity.clone();
        while permutation == identity {
            permutation.shuffle(&mut rng);
        }
        shift_schedule.push(ShiftEvent { step, permutation });
    }

    let sample_seed = rng.gen::<u64>();
    let mut env = EnvironmentSpec {
        argument_universe,
        inclusion_rates,
        context_noise: config.context_noise,
        gold: BTreeMap::new(),
        shift_schedule,
    };
    let samples = env.draw_samples(
        config.n_samples,
        "s",
        config.fraction_with_critique,
        sample_seed,
    );
    Ok((env, samples))
}
