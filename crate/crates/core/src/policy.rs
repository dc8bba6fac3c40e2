//! A toy generative reward model: a linear-softmax policy over one verdict decision and one
//! include/omit decision per universe slot.
//!
//! Argument decisions see `[1, evidence..., 0]`. The verdict is sampled last and sees
//! `[1, evidence..., vote]`, where `vote` is the net support for A in the critique just
//! produced, so the verdict can follow the critique the way a GRM's does.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{slot_key, slot_target};
use crate::preference::{Argument, ArgumentSet, Choice, Polarity};

pub const OMIT: usize = 0;
pub const INCLUDE_POSITIVE: usize = 1;
pub const INCLUDE_NEGATIVE: usize = 2;
/// Verdict index that produces malformed output.
pub const GARBLE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyLayout {
    pub universe_size: usize,
    /// Whether the verdict decision has a third, format-breaking option.
    pub garble: bool,
}

impl PolicyLayout {
    pub fn n_features(&self) -> usize {
        self.universe_size + 2
    }

    pub fn label_arity(&self) -> usize {
        if self.garble {
            3
        } else {
            2
        }
    }

    pub fn n_logits(&self) -> usize {
        self.label_arity() + 3 * self.universe_size
    }

    pub fn n_decisions(&self) -> usize {
        1 + self.universe_size
    }

    pub fn n_params(&self) -> usize {
        self.n_features() * self.n_logits()
    }

    /// Logit columns belonging to decision `t` (0 = verdict, 1 + k = slot k).
    pub fn block(&self, t: usize) -> Range<usize> {
        if t == 0 {
            0..self.label_arity()
        } else {
            let start = self.label_arity() + 3 * (t - 1);
            start..start + 3
        }
    }

    pub fn argument_context(&self, evidence: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n_features());
        x.push(1.0);
        x.extend_from_slice(evidence);
        x.push(0.0);
        x
    }

    pub fn label_context(&self, evidence: &[f64], critique: &ArgumentSet) -> Vec<f64> {
        let vote: f64 = critique
            .iter()
            .map(|a| if a.supports() == Choice::A { 1.0 } else { -1.0 })
            .sum();
        let mut x = self.argument_context(evidence);
        *x.last_mut().expect("non-empty context") = vote;
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub layout: PolicyLayout,
    /// Row-major `[n_features × n_logits]`.
    pub weights: Vec<f64>,
}

/// Result of decoding a decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub arguments: ArgumentSet,
    pub label: Option<Choice>,
    pub format_valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub sample_id: String,
    /// Index 0 is the verdict, index `1 + k` is slot `k`.
    pub decisions: Vec<usize>,
    pub contexts: Vec<Vec<f64>>,
    pub logprobs_old: Vec<f64>,
    pub argument_set: ArgumentSet,
    pub predicted_label: Option<Choice>,
    pub format_valid: bool,
}

impl RolloutRecord {
    pub fn label_match(&self, gold: Choice) -> bool {
        self.predicted_label == Some(gold)
    }
}

pub fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|z| (z - max) / temperature).collect();
    let log_norm = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    shifted.iter().map(|s| s - log_norm).collect()
}

impl ToyPolicy {
    /// Uniform over arguments; the garble option (if any) starts at `garble_fraction`
    /// probability under unit temperature.
    pub fn new(layout: PolicyLayout, garble_fraction: f64) -> Self {
        let mut weights = vec![0.0; layout.n_params()];
        if layout.garble && garble_fraction > 0.0 {
            let f = garble_fraction.min(0.999);
            weights[GARBLE] = (2.0 * f / (1.0 - f)).ln();
        }
        ToyPolicy { layout, weights }
    }

    pub fn logits(&self, context: &[f64], t: usize) -> Vec<f64> {
        let cols = self.layout.n_logits();
        self.layout
            .block(t)
            .map(|j| {
                context
                    .iter()
                    .enumerate()
                    .map(|(f, x)| x * self.weights[f * cols + j])
                    .sum()
            })
            .collect()
    }

    pub fn log_probs(&self, context: &[f64], t: usize, temperature: f64) -> Vec<f64> {
        log_softmax(&self.logits(context, t), temperature)
    }

    pub fn probs(&self, context: &[f64], t: usize, temperature: f64) -> Vec<f64> {
        self.log_probs(context, t, temperature)
            .into_iter()
            .map(f64::exp)
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }
}

/// Decode a full decision vector. Total: out-of-range slot values are treated as omit.
pub fn decode(layout: &PolicyLayout, decisions: &[usize]) -> Decoded {
    let arguments = decode_arguments(&decisions[1..]);
    let label = match decisions[0] {
        0 => Some(Choice::A),
        1 => Some(Choice::B),
        _ => None,
    };
    debug_assert_eq!(decisions.len(), layout.n_decisions());
    Decoded {
        arguments,
        format_valid: label.is_some(),
        label,
    }
}

pub fn decode_arguments(slot_decisions: &[usize]) -> ArgumentSet {
    slot_decisions
        .iter()
        .enumerate()
        .filter_map(|(k, &d)| {
            let polarity = match d {
                INCLUDE_POSITIVE => Polarity::Positive,
                INCLUDE_NEGATIVE => Polarity::Negative,
                _ => return None,
            };
            Some(Argument::new(slot_key(k), slot_target(k), polarity))
        })
        .collect()
}

fn sample_index(log_probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver of mass past the end: take the most likely entry
    log_probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Draw `n` independent rollouts for one sample. Deterministic in `seed`.
pub fn rollout(
    policy: &ToyPolicy,
    sample_id: &str,
    evidence: &[f64],
    n: usize,
    temperature: f64,
    seed: u64,
) -> Vec<RolloutRecord> {
    assert!(temperature > 0.0, "temperature must be positive");
    let layout = policy.layout;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arg_ctx = layout.argument_context(evidence);
    (0..n)
        .map(|_| {
            let d = layout.n_decisions();
            let mut decisions = vec![0; d];
            let mut contexts = vec![Vec::new(); d];
            let mut logprobs = vec![0.0; d];
            for t in 1..d {
                let lp = policy.log_probs(&arg_ctx, t, temperature);
                let a = sample_index(&lp, &mut rng);
                decisions[t] = a;
                logprobs[t] = lp[a];
                contexts[t] = arg_ctx.clone();
            }
            let critique = decode_arguments(&decisions[1..]);
            let label_ctx = layout.label_context(evidence, &critique);
            let lp = policy.log_probs(&label_ctx, 0, temperature);
            let a = sample_index(&lp, &mut rng);
            decisions[0] = a;
            logprobs[0] = lp[a];
            contexts[0] = label_ctx;
            let decoded = decode(&layout, &decisions);
            RolloutRecord {
                sample_id: sample_id.to_string(),
                decisions,
                contexts,
                logprobs_old: logprobs,
                argument_set: decoded.arguments,
                predicted_label: decoded.label,
                format_valid: decoded.format_valid,
            }
        })
        .collect()
}

/// Most likely decision at every step, verdict conditioned on the decoded critique.
pub fn argmax_decode(policy: &ToyPolicy, evidence: &[f64]) -> Vec<usize> {
    let layout = policy.layout;
    let arg_ctx = layout.argument_context(evidence);
    let argmax = |v: Vec<f64>| {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    };
    let mut decisions = vec![0; layout.n_decisions()];
    for (t, d) in decisions.iter_mut().enumerate().skip(1) {
        *d = argmax(policy.logits(&arg_ctx, t));
    }
    let critique = decode_arguments(&decisions[1..]);
    decisions[0] = argmax(policy.logits(&layout.label_context(evidence, &critique), 0));
    decisions
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(u: usize) -> PolicyLayout {
        PolicyLayout {
            universe_size: u,
            garble: true,
        }
    }

    fn random_policy(u: usize, seed: u64) -> ToyPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ToyPolicy::new(layout(u), 0.05);
        for w in &mut p.weights {
            *w = rng.gen_range(-1.0..1.0);
        }
        p
    }

    #[test]
    fn probabilities_sum_to_one_and_are_positive() {
        let p = random_policy(4, 1);
        let ctx = p.layout.argument_context(&[1.0, -1.0, 1.0, -1.0]);
        for t in 0..p.layout.n_decisions() {
            let probs = p.probs(&ctx, t, 0.7);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(probs.iter().all(|&q| q > 0.0));
        }
    }

    #[test]
    fn initial_garble_rate() {
        let p = ToyPolicy::new(layout(3), 0.05);
        let probs = p.probs(&p.layout.argument_context(&[0.0; 3]), 0, 1.0);
        assert!((probs[GARBLE] - 0.05).abs() < 1e-12);
        assert!((probs[0] - probs[1]).abs() < 1e-15);
    }

    #[test]
    fn rollout_count_and_shapes() {
        let p = random_policy(5, 2);
        let rs = rollout(&p, "s0", &[1.0; 5], 8, 0.7, 42);
        assert_eq!(rs.len(), 8);
        for r in &rs {
            assert_eq!(r.decisions.len(), 6);
            assert_eq!(r.logprobs_old.len(), 6);
            assert_eq!(r.contexts.len(), 6);
            let d = decode(&p.layout, &r.decisions);
            assert_eq!(d.arguments, r.argument_set);
            assert_eq!(d.format_valid, r.format_valid);
        }
    }

    #[test]
    fn rollout_is_deterministic_in_seed() {
        let p = random_policy(4, 3);
        let a = rollout(&p, "s", &[1.0, -1.0, 1.0, 1.0], 6, 0.7, 9);
        let b = rollout(&p, "s", &[1.0, -1.0, 1.0, 1.0], 6, 0.7, 9);
        assert_eq!(a, b);
        let c = rollout(&p, "s", &[1.0, -1.0, 1.0, 1.0], 6, 0.7, 10);
        assert_ne!(
            a.iter().map(|r| &r.decisions).collect::<Vec<_>>(),
            c.iter().map(|r| &r.decisions).collect::<Vec<_>>()
        );
    }

    #[test]
    fn near_zero_temperature_is_argmax() {
        let p = random_policy(4, 4);
        let evidence = [1.0, -1.0, -1.0, 1.0];
        let expected = argmax_decode(&p, &evidence);
        for r in rollout(&p, "s", &evidence, 8, 1e-6, 5) {
            assert_eq!(r.decisions, expected);
        }
    }

    #[test]
    fn decode_table() {
        let l = layout(4);
        let d = decode(&l, &[0, OMIT, OMIT, OMIT, OMIT]);
        assert!(d.arguments.is_empty());
        assert!(d.format_valid);
        assert_eq!(d.label, Some(Choice::A));

        let d = decode(&l, &[GARBLE, OMIT, OMIT, OMIT, OMIT]);
        assert!(!d.format_valid);
        assert_eq!(d.label, None);

        let d = decode(&l, &[1, OMIT, INCLUDE_POSITIVE, OMIT, INCLUDE_NEGATIVE]);
        assert_eq!(
            d.arguments.arguments,
            vec![
                Argument::new("arg1", Choice::B, Polarity::Positive),
                Argument::new("arg3", Choice::B, Polarity::Negative),
            ]
        );
        assert_eq!(d.label, Some(Choice::B));
    }

    #[test]
    fn label_context_carries_vote() {
        let l = layout(2);
        let critique = ArgumentSet::new(vec![
            Argument::new("arg0", Choice::A, Polarity::Positive),
            Argument::new("arg1", Choice::B, Polarity::Negative),
        ]);
        assert_eq!(
            l.label_context(&[1.0, -1.0], &critique),
            vec![1.0, 1.0, -1.0, 2.0]
        );
    }
}
