//! Critique similarity as a process-reward proxy.
//!
//! Reference and generated critiques are compared as sets of unique argument tuples
//! `(content_key, target, polarity)`. A generated critique that repeats a tuple scores zero
//! outright. In core mode a fatal reference argument is the only one that counts.

use std::collections::HashSet;

use serde::{Serialize, Serializer};

use crate::judge::{JudgeError, LlmBackend};
use crate::preference::{ArgumentSet, PreferenceSample};
use crate::prompt::{self, bindings, TemplateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Only key arguments; a fatal reference error collapses the reference to itself.
    Core,
    /// All arguments.
    All,
}

fn round4<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round_to_4(*v))
}

pub fn round_to_4(v: f64) -> f64 {
    (v * 10_000.0).round() / 10_000.0
}

/// Precision / recall / F1 of a generated critique against a reference.
///
/// Values are kept exact in memory and rounded to four decimals when serialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimilarityScores {
    #[serde(serialize_with = "round4")]
    pub f1: f64,
    #[serde(serialize_with = "round4")]
    pub precision: f64,
    #[serde(serialize_with = "round4")]
    pub recall: f64,
    pub tp: usize,
    pub n_ref: usize,
    pub n_gen: usize,
    pub repeated: bool,
}

impl SimilarityScores {
    pub fn from_counts(tp: usize, n_ref: usize, n_gen: usize) -> Self {
        let precision = if n_gen > 0 {
            tp as f64 / n_gen as f64
        } else {
            0.0
        };
        let recall = if n_ref > 0 {
            tp as f64 / n_ref as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        SimilarityScores {
            f1,
            precision,
            recall,
            tp,
            n_ref,
            n_gen,
            repeated: false,
        }
    }

    pub fn repeated() -> Self {
        SimilarityScores {
            repeated: true,
            ..SimilarityScores::from_counts(0, 0, 0)
        }
    }

    /// Scores read back from a judge, which reports no counts.
    pub fn from_judge(f1: f64, precision: f64, recall: f64) -> Self {
        SimilarityScores {
            f1,
            precision,
            recall,
            tp: 0,
            n_ref: 0,
            n_gen: 0,
            repeated: false,
        }
    }

    pub fn uniform(score: f64) -> Self {
        SimilarityScores::from_judge(score, score, score)
    }
}

/// True iff some argument tuple occurs at least twice.
pub fn repeated_argument_check(generated: &ArgumentSet) -> bool {
    let mut seen = HashSet::new();
    generated.iter().any(|a| !seen.insert(a.tuple()))
}

pub fn count_reference_arguments(reference: &ArgumentSet, mode: MatchMode) -> usize {
    if mode == MatchMode::Core && reference.first_fatal().is_some() {
        1
    } else {
        reference.unique().len()
    }
}

/// Size of the maximum one-to-one matching between unique reference tuples and unique
/// generated tuples. Matching is exact tuple equality, so greedy matching is optimal.
pub fn count_true_positives(
    reference: &ArgumentSet,
    generated: &ArgumentSet,
    mode: MatchMode,
) -> usize {
    let gen: HashSet<_> = generated.iter().map(|a| a.tuple()).collect();
    match (mode, reference.first_fatal()) {
        (MatchMode::Core, Some(fatal)) => usize::from(gen.contains(&fatal.tuple())),
        _ => reference
            .unique()
            .into_iter()
            .filter(|a| gen.contains(&a.tuple()))
            .count(),
    }
}

pub fn compute_similarity(
    reference: &ArgumentSet,
    generated: &ArgumentSet,
    mode: MatchMode,
) -> SimilarityScores {
    if repeated_argument_check(generated) {
        return SimilarityScores::repeated();
    }
    SimilarityScores::from_counts(
        count_true_positives(reference, generated, mode),
        count_reference_arguments(reference, mode),
        generated.unique().len(),
    )
}

/// Ask an external judge to grade the critique directly against the responses.
/// The judge's f1 value is replicated into all three metrics.
pub fn meta_judge_score(
    sample: &PreferenceSample,
    generated_text: &str,
    judge: &dyn LlmBackend,
) -> Result<SimilarityScores, JudgeError> {
    let b = bindings([
        ("conv_his", sample.query.as_str()),
        ("response_A", sample.response_a.as_str()),
        ("response_B", sample.response_b.as_str()),
        ("critiques", generated_text),
    ]);
    let raw = judge
        .complete(TemplateId::MetaJudge, &b)
        .map_err(|e| e.context(format!("meta-judge for sample {}", sample.id)))?;
    let parsed = prompt::parse_scores(&raw)?;
    Ok(SimilarityScores::uniform(parsed.f1))
}

/// Scores a generated critique against a reference critique for one sample.
pub trait CritiqueScorer: Send + Sync {
    fn score(
        &self,
        sample: &PreferenceSample,
        reference: &ArgumentSet,
        generated: &ArgumentSet,
    ) -> Result<SimilarityScores, JudgeError>;
}

/// Deterministic exact-tuple scorer.
#[derive(Debug, Clone, Copy)]
pub struct ExactMatchScorer {
    pub mode: MatchMode,
}

impl Default for ExactMatchScorer {
    fn default() -> Self {
        ExactMatchScorer {
            mode: MatchMode::Core,
        }
    }
}

impl CritiqueScorer for ExactMatchScorer {
    fn score(
        &self,
        _sample: &PreferenceSample,
        reference: &ArgumentSet,
        generated: &ArgumentSet,
    ) -> Result<SimilarityScores, JudgeError> {
        Ok(compute_similarity(reference, generated, self.mode))
    }
}

/// Scores through an LLM using the similarity templates.
pub struct JudgeScorer<B> {
    pub backend: B,
    pub mode: MatchMode,
}

impl<B: LlmBackend> CritiqueScorer for JudgeScorer<B> {
    fn score(
        &self,
        sample: &PreferenceSample,
        reference: &ArgumentSet,
        generated: &ArgumentSet,
    ) -> Result<SimilarityScores, JudgeError> {
        let template = match self.mode {
            MatchMode::Core => TemplateId::SimilarityCore,
            MatchMode::All => TemplateId::SimilarityAll,
        };
        let reference_text = sample
            .human_critique_text
            .clone()
            .filter(|_| sample.human_critique.as_ref() == Some(reference))
            .unwrap_or_else(|| reference.to_text());
        let generated_text = generated.to_text();
        let b = bindings([
            ("critiques", generated_text.as_str()),
            ("reference_critiques", reference_text.as_str()),
        ]);
        let raw = self
            .backend
            .complete(template, &b)
            .map_err(|e| e.context(format!("similarity for sample {}", sample.id)))?;
        Ok(prompt::parse_scores(&raw)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::FnBackend;
    use crate::preference::{Argument, Choice, Polarity};

    fn arg(k: &str, t: Choice, p: Polarity) -> Argument {
        Argument::new(k, t, p)
    }
    fn pos(k: &str) -> Argument {
        arg(k, Choice::A, Polarity::Positive)
    }
    fn set(args: &[Argument]) -> ArgumentSet {
        ArgumentSet::new(args.to_vec())
    }

    #[test]
    fn repeat_check_cases() {
        assert!(!repeated_argument_check(&ArgumentSet::default()));
        assert!(repeated_argument_check(&set(&[pos("a1"), pos("a1")])));
        assert!(!repeated_argument_check(&set(&[
            pos("a1"),
            arg("a1", Choice::A, Polarity::Negative)
        ])));
    }

    #[test]
    fn reference_counts() {
        let fatal = arg("f", Choice::B, Polarity::Negative).fatal();
        let r = set(&[fatal, pos("a"), pos("b"), pos("c")]);
        assert_eq!(count_reference_arguments(&r, MatchMode::Core), 1);
        assert_eq!(count_reference_arguments(&r, MatchMode::All), 4);
        let dup = set(&[pos("a"), pos("a"), pos("a")]);
        assert_eq!(count_reference_arguments(&dup, MatchMode::All), 1);
    }

    #[test]
    fn true_positive_cases() {
        let r = set(&[pos("a1"), pos("a2")]);
        assert_eq!(
            count_true_positives(&r, &set(&[pos("a1"), pos("a3")]), MatchMode::All),
            1
        );

        let fatal = arg("f", Choice::B, Polarity::Negative).fatal();
        let r = set(&[fatal.clone(), pos("a2")]);
        assert_eq!(
            count_true_positives(&r, &set(&[pos("a2")]), MatchMode::Core),
            0
        );
        assert_eq!(
            count_true_positives(&r, &set(&[fatal.clone(), pos("a2")]), MatchMode::Core),
            1
        );
        // a fatal generated on the wrong response does not count
        let wrong_target = arg("f", Choice::A, Polarity::Negative);
        assert_eq!(
            count_true_positives(&r, &set(&[wrong_target]), MatchMode::Core),
            0
        );

        assert_eq!(
            count_true_positives(
                &set(&[pos("a1")]),
                &set(&[pos("a1"), pos("a1")]),
                MatchMode::All
            ),
            1
        );
    }

    #[test]
    fn similarity_examples() {
        let s = compute_similarity(
            &set(&[pos("a1"), pos("a2")]),
            &set(&[pos("a1"), pos("a3")]),
            MatchMode::Core,
        );
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));

        let s = compute_similarity(&set(&[pos("a1")]), &ArgumentSet::default(), MatchMode::Core);
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));

        let s = compute_similarity(
            &set(&[pos("a1"), pos("a2"), pos("a3")]),
            &set(&[pos("a1"), pos("a2"), pos("a3"), pos("a4")]),
            MatchMode::All,
        );
        assert_eq!((s.precision, s.recall), (0.75, 1.0));
        assert!((s.f1 - 6.0 / 7.0).abs() < 1e-15);
        assert_eq!((s.tp, s.n_ref, s.n_gen), (3, 3, 4));
    }

    #[test]
    fn repeated_generation_zeroes_everything() {
        let s = compute_similarity(
            &set(&[pos("a1")]),
            &set(&[pos("a1"), pos("a1")]),
            MatchMode::All,
        );
        assert!(s.repeated);
        assert_eq!((s.f1, s.precision, s.recall), (0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_reference_gives_zero_recall() {
        let s = compute_similarity(&ArgumentSet::default(), &set(&[pos("a")]), MatchMode::All);
        assert_eq!((s.precision, s.recall, s.f1, s.n_ref), (0.0, 0.0, 0.0, 0));
    }

    #[test]
    fn serialization_rounds_to_four_places() {
        let s = SimilarityScores::from_counts(1, 3, 1);
        let json = serde_json::to_value(s).unwrap();
        assert_eq!(json["recall"], 0.3333);
        assert_eq!(json["f1"], 0.5);
        assert!((s.recall - 1.0 / 3.0).abs() < 1e-15);
    }

    fn sample() -> PreferenceSample {
        PreferenceSample {
            id: "s0".into(),
            query: "q".into(),
            response_a: "ra".into(),
            response_b: "rb".into(),
            label: Choice::A,
            human_critique_text: None,
            human_critique: None,
        }
    }

    fn scores_xml(v: f64) -> String {
        format!("<thinking>t</thinking><scores><critique_f1>{v}</critique_f1><critique_precision>{v}</critique_precision><critique_recall>{v}</critique_recall></scores>")
    }

    #[test]
    fn meta_judge_replicates_score() {
        let backend = FnBackend(|t: TemplateId, p: &str| {
            assert_eq!(t, TemplateId::MetaJudge);
            assert!(p.contains("<Critiques>\n\nmy critique\n\n</Critiques>"));
            Ok(scores_xml(0.8))
        });
        let s = meta_judge_score(&sample(), "my critique", &backend).unwrap();
        assert_eq!(
            (s.f1, s.precision, s.recall, s.repeated),
            (0.8, 0.8, 0.8, false)
        );
    }

    #[test]
    fn meta_judge_identical_critique_mock() {
        let reference = "- praises response A: clarity";
        let backend = FnBackend(move |_: TemplateId, p: &str| {
            let critique = prompt::last_block(p, "Critiques").unwrap().trim();
            Ok(scores_xml(if critique == reference { 1.0 } else { 0.0 }))
        });
        let s = meta_judge_score(&sample(), reference, &backend).unwrap();
        assert_eq!((s.f1, s.precision, s.recall), (1.0, 1.0, 1.0));
    }

    #[test]
    fn meta_judge_errors_propagate() {
        let malformed = FnBackend(|_: TemplateId, _: &str| Ok("<scores>oops</scores>".to_string()));
        assert!(matches!(
            meta_judge_score(&sample(), "c", &malformed),
            Err(JudgeError::Parse(_))
        ));
        let down = FnBackend(|_: TemplateId, _: &str| Err(JudgeError::Transport("503".into())));
        assert!(matches!(
            meta_judge_score(&sample(), "c", &down),
            Err(JudgeError::Context { .. })
        ));
    }

    #[test]
    fn judge_scorer_uses_mode_template() {
        let backend = FnBackend(|t: TemplateId, p: &str| {
            assert_eq!(t, TemplateId::SimilarityAll);
            assert!(p.contains("<Generated Evaluation Content>\n\n- praises response A: a1"));
            Ok(scores_xml(0.25))
        });
        let scorer = JudgeScorer {
            backend,
            mode: MatchMode::All,
        };
        let s = scorer
            .score(&sample(), &set(&[pos("a2")]), &set(&[pos("a1")]))
            .unwrap();
        assert_eq!(s.f1, 0.25);
    }
}
