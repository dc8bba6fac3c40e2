//! Feedback-Edit: pick the two strongest candidates, ask the GRM to critique that pair,
//! then have an editor rewrite the winner using the critique.

use crate::eval::tournament::{bon_select, TournamentError};
use crate::judge::{JudgeError, LlmBackend, PairwiseJudge};
use crate::prompt::{bindings, TemplateId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditOutcome {
    pub top: [usize; 2],
    pub critique: String,
    pub edited: String,
}

pub fn feedback_edit(
    query: &str,
    candidates: &[String],
    judge: &dyn PairwiseJudge,
    editor: &dyn LlmBackend,
    seed: u64,
) -> Result<EditOutcome, TournamentError> {
    if candidates.len() < 2 {
        return Err(TournamentError::TooFewCandidates {
            needed: 2,
            got: candidates.len(),
        });
    }
    let bracket = bon_select(query, candidates, judge, seed)?;
    let top = [bracket.ranking[0], bracket.ranking[1]];
    let (first, second) = (&candidates[top[0]], &candidates[top[1]]);
    let verdict = judge
        .judge(query, first, second)
        .map_err(|e| e.context("critique of the top pair"))?;
    let b = bindings([
        ("conv_his", query),
        ("response_A", first.as_str()),
        ("response_B", second.as_str()),
        ("critique", verdict.critique.as_str()),
    ]);
    let edited = editor
        .complete(TemplateId::Edit, &b)
        .map_err(|e: JudgeError| e.context("edit call"))?;
    Ok(EditOutcome {
        top,
        critique: verdict.critique,
        edited,
    })
}
