//! Abstractions over LLM judges. The networked implementation lives in `nlhf-judge`;
//! tests and offline runs plug in local oracles.

use thiserror::Error;

use crate::preference::Choice;
use crate::prompt::{self, bindings, Bindings, FormatInvalid, ParseError, RenderError, TemplateId};

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge transport failed: {0}")]
    Transport(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Format(#[from] FormatInvalid),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<JudgeError>,
    },
}

impl JudgeError {
    pub fn context(self, context: impl Into<String>) -> JudgeError {
        JudgeError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

/// Anything that turns a template plus bindings into raw judge text.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, template: TemplateId, bindings: &Bindings) -> Result<String, JudgeError>;
}

impl<T: LlmBackend + ?Sized> LlmBackend for &T {
    fn complete(&self, template: TemplateId, bindings: &Bindings) -> Result<String, JudgeError> {
        (**self).complete(template, bindings)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub choice: Choice,
    pub critique: String,
}

/// A pairwise preference judge: which of two responses to a query is better, and why.
pub trait PairwiseJudge: Send + Sync {
    fn judge(&self, query: &str, response_a: &str, response_b: &str)
        -> Result<Verdict, JudgeError>;
}

impl<T: PairwiseJudge + ?Sized> PairwiseJudge for &T {
    fn judge(
        &self,
        query: &str,
        response_a: &str,
        response_b: &str,
    ) -> Result<Verdict, JudgeError> {
        (**self).judge(query, response_a, response_b)
    }
}

/// Generative reward model prompted through the GRM template.
pub struct GrmJudge<B> {
    pub backend: B,
}

impl<B: LlmBackend> PairwiseJudge for GrmJudge<B> {
    fn judge(
        &self,
        query: &str,
        response_a: &str,
        response_b: &str,
    ) -> Result<Verdict, JudgeError> {
        let b = bindings([
            ("conv_his", query),
            ("response_A", response_a),
            ("response_B", response_b),
        ]);
        let raw = self.backend.complete(TemplateId::Grm, &b)?;
        let choice = prompt::parse_choice(&raw)?;
        Ok(Verdict {
            choice,
            critique: prompt::parse_critics(&raw),
        })
    }
}

/// Renders the template and answers from a closure. Handy for scripted tests and demos.
pub struct FnBackend<F>(pub F);

impl<F> LlmBackend for FnBackend<F>
where
    F: Fn(TemplateId, &str) -> Result<String, JudgeError> + Send + Sync,
{
    fn complete(&self, template: TemplateId, bindings: &Bindings) -> Result<String, JudgeError> {
        let rendered = prompt::render_prompt(template, bindings)?;
        (self.0)(template, &rendered)
    }
}
