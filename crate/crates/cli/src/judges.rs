//! Local stand-ins for the remote judge, plus the candidate file format.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use nlhf_core::judge::{JudgeError, LlmBackend, PairwiseJudge, Verdict};
use nlhf_core::preference::Choice;
use nlhf_core::prompt::{Bindings, TemplateId};

#[derive(Debug, Clone, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub quality: Option<f64>,
}

pub fn load_candidates(path: &Path) -> Result<Vec<Candidate>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

/// Prefers the candidate with the higher `quality`; ties go to whichever was shown first.
pub struct QualityOracle {
    quality: std::collections::HashMap<String, f64>,
}

impl QualityOracle {
    pub fn new(candidates: &[Candidate]) -> Result<Self> {
        let mut quality = std::collections::HashMap::new();
        for c in candidates {
            let Some(q) = c.quality else {
                bail!(
                    "candidate {} has no quality; the local oracle needs one",
                    c.id
                );
            };
            quality.insert(c.text.clone(), q);
        }
        Ok(QualityOracle { quality })
    }

    fn of(&self, text: &str) -> Result<f64, JudgeError> {
        self.quality
            .get(text)
            .copied()
            .ok_or_else(|| JudgeError::Transport("response not among the candidates".into()))
    }
}

impl PairwiseJudge for QualityOracle {
    fn judge(&self, _query: &str, a: &str, b: &str) -> Result<Verdict, JudgeError> {
        let (qa, qb) = (self.of(a)?, self.of(b)?);
        let choice = if qa >= qb { Choice::A } else { Choice::B };
        Ok(Verdict {
            choice,
            critique: format!("quality {qa} vs {qb}"),
        })
    }
}

/// Editor that returns response A untouched.
pub struct EchoEditor;

impl LlmBackend for EchoEditor {
    fn complete(&self, template: TemplateId, bindings: &Bindings) -> Result<String, JudgeError> {
        nlhf_core::prompt::render_prompt(template, bindings)?;
        Ok(bindings.get("response_A").cloned().unwrap_or_default())
    }
}
