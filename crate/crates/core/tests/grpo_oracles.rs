use nlhf_core::grpo::{policy_update, surrogate_loss, RolloutGroup, SurrogateConfig};
use nlhf_core::policy::{log_softmax, rollout, PolicyLayout, RolloutRecord, ToyPolicy};
use nlhf_core::reward::{group_advantages, DEFAULT_STD_GUARD};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_policy(layout: PolicyLayout, rng: &mut ChaCha8Rng, scale: f64) -> ToyPolicy {
    let mut p = ToyPolicy::new(layout, 0.05);
    for w in &mut p.weights {
        *w = rng.gen_range(-scale..scale);
    }
    p
}

fn groups(old: &ToyPolicy, rng: &mut ChaCha8Rng, n_groups: usize, n: usize) -> Vec<RolloutGroup> {
    let u = old.layout.universe_size;
    (0..n_groups)
        .map(|g| {
            let evidence: Vec<f64> = (0..u).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let rollouts = rollout(old, &format!("s{g}"), &evidence, n, 0.7, rng.gen());
            let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.5)).collect();
            RolloutGroup {
                rollouts,
                advantages: group_advantages(&rewards, DEFAULT_STD_GUARD).unwrap(),
            }
        })
        .collect()
}

/// Log-probabilities of decision `t` written out from the weights, independent of the
/// policy's own helpers: logits are `context · W[:, block(t)]`.
fn oracle_log_probs(p: &ToyPolicy, ctx: &[f64], t: usize, temperature: f64) -> Vec<f64> {
    let n_logits = p.layout.n_logits();
    let logits: Vec<f64> = p
        .layout
        .block(t)
        .map(|col| {
            ctx.iter()
                .enumerate()
                .map(|(f, x)| x * p.weights[f * n_logits + col])
                .sum()
        })
        .collect();
    log_softmax(&logits, temperature)
}

fn oracle_objective(
    p: &ToyPolicy,
    reference: &ToyPolicy,
    groups: &[RolloutGroup],
    cfg: &SurrogateConfig,
) -> f64 {
    let mut total = 0.0;
    let mut n = 0.0;
    for g in groups {
        for (r, &adv) in g.rollouts.iter().zip(&g.advantages.advantages) {
            let mut per = 0.0;
            for t in 0..r.decisions.len() {
                let lp = oracle_log_probs(p, &r.contexts[t], t, cfg.temperature);
                let lq = oracle_log_probs(reference, &r.contexts[t], t, cfg.temperature);
                let ratio = (lp[r.decisions[t]] - r.logprobs_old[t]).exp();
                let clipped = ratio.clamp(1.0 - cfg.epsilon, 1.0 + cfg.epsilon);
                let kl: f64 = lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum();
                per += (ratio * adv).min(clipped * adv) - cfg.beta * kl;
            }
            total += per / r.decisions.len() as f64;
            n += 1.0;
        }
    }
    total / n
}

fn near_clip_boundary(p: &ToyPolicy, rollouts: &[&RolloutRecord], cfg: &SurrogateConfig) -> bool {
    rollouts.iter().any(|r| {
        (0..r.decisions.len()).any(|t| {
            let lp = p.log_probs(&r.contexts[t], t, cfg.temperature)[r.decisions[t]];
            let ratio = (lp - r.logprobs_old[t]).exp();
            (ratio - (1.0 - cfg.epsilon)).abs() < 1e-4 || (ratio - (1.0 + cfg.epsilon)).abs() < 1e-4
        })
    })
}

#[test]
fn loss_matches_written_out_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..40 {
        let layout = PolicyLayout {
            universe_size: 1 + case % 4,
            garble: case % 2 == 0,
        };
        let old = random_policy(layout, &mut rng, 0.5);
        let current = random_policy(layout, &mut rng, 0.8);
        let reference = random_policy(layout, &mut rng, 0.3);
        let gs = groups(&old, &mut rng, 3, 1 + case % 4);
        let cfg = SurrogateConfig {
            beta: 0.05,
            ..SurrogateConfig::default()
        };
        let out = surrogate_loss(&current, &gs, &cfg, &reference).unwrap();
        let want = -oracle_objective(&current, &reference, &gs, &cfg);
        assert!(
            (out.loss - want).abs() < 1e-12,
            "case {case}: {} vs {want}",
            out.loss
        );
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = 1e-6;
    let mut checked = 0;
    let mut case = 0;
    while checked < 120 {
        case += 1;
        let layout = PolicyLayout {
            universe_size: 1 + case % 4,
            garble: case % 3 != 0,
        };
        let old = random_policy(layout, &mut rng, 0.5);
        // near the old policy so most ratios sit inside the clip band, with some outside
        let mut current = old.clone();
        for w in &mut current.weights {
            *w += rng.gen_range(-0.3..0.3);
        }
        let reference = random_policy(layout, &mut rng, 0.5);
        let gs = groups(&old, &mut rng, 2, 1 + case % 4);
        let cfg = SurrogateConfig {
            beta: [0.0, 0.001, 0.1][case % 3],
            ..SurrogateConfig::default()
        };
        let all: Vec<&RolloutRecord> = gs.iter().flat_map(|g| &g.rollouts).collect();
        if near_clip_boundary(&current, &all, &cfg) {
            continue;
        }
        let analytic = surrogate_loss(&current, &gs, &cfg, &reference)
            .unwrap()
            .gradient;
        let numeric: Vec<f64> = (0..current.weights.len())
            .map(|i| {
                let mut plus = current.clone();
                let mut minus = current.clone();
                plus.weights[i] += h;
                minus.weights[i] -= h;
                let lp = surrogate_loss(&plus, &gs, &cfg, &reference).unwrap().loss;
                let lm = surrogate_loss(&minus, &gs, &cfg, &reference).unwrap().loss;
                (lp - lm) / (2.0 * h)
            })
            .collect();
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-6);
        assert!(
            diff / scale < 1e-5,
            "case {case}: relative error {}",
            diff / scale
        );
        checked += 1;
    }
}

#[test]
fn gradient_descent_on_a_quadratic_converges() {
    // loss ½‖w − w*‖² has gradient w − w*; each step with rate η scales the gap by 1 − η
    let layout = PolicyLayout {
        universe_size: 2,
        garble: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let target = random_policy(layout, &mut rng, 1.0);
    let mut p = ToyPolicy::new(layout, 0.0);
    let gap = |p: &ToyPolicy| -> f64 {
        p.weights
            .iter()
            .zip(&target.weights)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let start = gap(&p);
    for k in 1..=20 {
        let grad: Vec<f64> = p
            .weights
            .iter()
            .zip(&target.weights)
            .map(|(a, b)| a - b)
            .collect();
        p = policy_update(&p, &grad, 0.25, None).unwrap();
        assert!((gap(&p) - start * 0.75f64.powi(k)).abs() < 1e-12);
    }

    let grad: Vec<f64> = p.weights.iter().map(|_| 10.0).collect();
    let clipped = policy_update(&p, &grad, 1.0, Some(0.5)).unwrap();
    let step: f64 = clipped
        .weights
        .iter()
        .zip(&p.weights)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!((step - 0.5).abs() < 1e-12);
    assert!(policy_update(&p, &grad, 0.0, None).is_err());
    assert!(policy_update(&p, &grad[1..], 0.1, None).is_err());
}

fn population_moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (
        mean,
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt(),
    )
}

proptest! {
    #[test]
    fn advantages_are_standardized_and_affine_invariant(
        rewards in prop::collection::vec(-2.0f64..2.0, 2..12),
        shift in -5.0f64..5.0,
        scale in 0.1f64..10.0,
    ) {
        let (_, std) = population_moments(&rewards);
        prop_assume!(std > 1e-3);
        let a = group_advantages(&rewards, DEFAULT_STD_GUARD).unwrap().advantages;
        let (m, s) = population_moments(&a);
        prop_assert!(m.abs() < 1e-9);
        prop_assert!((s - 1.0).abs() < 1e-9);
        let moved: Vec<f64> = rewards.iter().map(|r| scale * r + shift).collect();
        let b = group_advantages(&moved, DEFAULT_STD_GUARD).unwrap().advantages;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_groups_get_zero_advantage(r in -2.0f64..2.0, n in 1usize..10) {
        let a = group_advantages(&vec![r; n], DEFAULT_STD_GUARD).unwrap();
        prop_assert!(a.advantages.iter().all(|&x| x == 0.0));
    }
}
