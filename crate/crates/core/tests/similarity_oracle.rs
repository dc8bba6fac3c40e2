use nlhf_core::preference::{Argument, ArgumentSet, Choice, Polarity};
use nlhf_core::similarity::{
    compute_similarity, count_reference_arguments, count_true_positives, repeated_argument_check,
    MatchMode,
};
use proptest::prelude::*;

type Tuple = (String, Choice, Polarity);

fn tuple(a: &Argument) -> Tuple {
    (a.content_key.clone(), a.target, a.polarity)
}

fn unique(set: &ArgumentSet) -> Vec<Tuple> {
    let mut out: Vec<Tuple> = Vec::new();
    for a in set.iter() {
        if !out.contains(&tuple(a)) {
            out.push(tuple(a));
        }
    }
    out
}

/// Exhaustive maximum matching: try every way to assign each reference tuple to an unused
/// generated tuple (or to nothing).
fn max_matching(reference: &[Tuple], generated: &[Tuple], used: &mut Vec<bool>) -> usize {
    let Some((first, rest)) = reference.split_first() else {
        return 0;
    };
    let mut best = max_matching(rest, generated, used);
    for j in 0..generated.len() {
        if !used[j] && generated[j] == *first {
            used[j] = true;
            best = best.max(1 + max_matching(rest, generated, used));
            used[j] = false;
        }
    }
    best
}

fn oracle_tp(reference: &ArgumentSet, generated: &ArgumentSet, mode: MatchMode) -> usize {
    let refs = match (mode, reference.iter().find(|a| a.fatal)) {
        (MatchMode::Core, Some(f)) => vec![tuple(f)],
        _ => unique(reference),
    };
    let gens = unique(generated);
    max_matching(&refs, &gens, &mut vec![false; gens.len()])
}

fn argument() -> impl Strategy<Value = Argument> {
    (
        0..4usize,
        any::<bool>(),
        any::<bool>(),
        prop::bool::weighted(0.15),
    )
        .prop_map(|(k, a, pos, fatal)| {
            let target = if a { Choice::A } else { Choice::B };
            let polarity = if pos {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            let arg = Argument::new(format!("k{k}"), target, polarity);
            if fatal {
                arg.fatal()
            } else {
                arg
            }
        })
}

fn set(max: usize) -> impl Strategy<Value = ArgumentSet> {
    prop::collection::vec(argument(), 0..=max).prop_map(ArgumentSet::new)
}

fn mode() -> impl Strategy<Value = MatchMode> {
    prop_oneof![Just(MatchMode::Core), Just(MatchMode::All)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn true_positives_equal_exhaustive_matching(r in set(5), g in set(5), m in mode()) {
        prop_assert_eq!(count_true_positives(&r, &g, m), oracle_tp(&r, &g, m));
    }

    #[test]
    fn scores_follow_set_formulas(r in set(5), g in set(5), m in mode()) {
        let s = compute_similarity(&r, &g, m);
        if repeated_argument_check(&g) {
            prop_assert!(s.repeated);
            prop_assert_eq!((s.f1, s.precision, s.recall), (0.0, 0.0, 0.0));
            return Ok(());
        }
        let tp = oracle_tp(&r, &g, m) as f64;
        let n_gen = unique(&g).len() as f64;
        let n_ref = count_reference_arguments(&r, m) as f64;
        let p = if n_gen > 0.0 { tp / n_gen } else { 0.0 };
        let rec = if n_ref > 0.0 { tp / n_ref } else { 0.0 };
        let f1 = if p + rec > 0.0 { 2.0 * p * rec / (p + rec) } else { 0.0 };
        prop_assert_eq!(s.precision, p);
        prop_assert_eq!(s.recall, rec);
        prop_assert_eq!(s.f1, f1);
        prop_assert!((0.0..=1.0).contains(&s.f1));
    }

    #[test]
    fn duplicating_any_argument_zeroes_scores(r in set(4), g in set(4).prop_filter("non-empty", |g| !g.is_empty()), i in 0..4usize) {
        let mut args = g.arguments.clone();
        args.push(args[i % args.len()].clone());
        let s = compute_similarity(&r, &ArgumentSet::new(args), MatchMode::All);
        prop_assert!(s.repeated);
        prop_assert_eq!(s.f1, 0.0);
    }
}

#[test]
fn identical_critique_scores_one() {
    let r = ArgumentSet::new(vec![
        Argument::new("k0", Choice::A, Polarity::Positive),
        Argument::new("k1", Choice::B, Polarity::Negative),
    ]);
    let s = compute_similarity(&r, &r, MatchMode::Core);
    assert_eq!((s.f1, s.precision, s.recall), (1.0, 1.0, 1.0));
}

#[test]
fn fatal_reference_collapses_core_but_not_all() {
    let fatal = Argument::new("k0", Choice::B, Polarity::Negative).fatal();
    let r = ArgumentSet::new(vec![
        fatal.clone(),
        Argument::new("k1", Choice::A, Polarity::Positive),
    ]);
    let g = ArgumentSet::new(vec![Argument::new("k0", Choice::B, Polarity::Negative)]);
    let core = compute_similarity(&r, &g, MatchMode::Core);
    assert_eq!((core.tp, core.n_ref, core.f1), (1, 1, 1.0));
    let all = compute_similarity(&r, &g, MatchMode::All);
    assert_eq!((all.tp, all.n_ref), (1, 2));
    assert!((all.f1 - 2.0 / 3.0).abs() < 1e-15);
}
