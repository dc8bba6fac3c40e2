//! Judge prompt templates and parsers for the tagged blocks judges answer with.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preference::Choice;
use crate::similarity::SimilarityScores;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Grm,
    SimilarityCore,
    SimilarityAll,
    MetaJudge,
    Edit,
}

impl TemplateId {
    pub const ALL: [TemplateId; 5] = [
        TemplateId::Grm,
        TemplateId::SimilarityCore,
        TemplateId::SimilarityAll,
        TemplateId::MetaJudge,
        TemplateId::Edit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Grm => "grm",
            TemplateId::SimilarityCore => "similarity_core",
            TemplateId::SimilarityAll => "similarity_all",
            TemplateId::MetaJudge => "meta_judge",
            TemplateId::Edit => "edit",
        }
    }

    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateId::Grm => &["conv_his", "response_A", "response_B"],
            TemplateId::SimilarityCore | TemplateId::SimilarityAll => {
                &["critiques", "reference_critiques"]
            }
            TemplateId::MetaJudge => &["conv_his", "response_A", "response_B", "critiques"],
            TemplateId::Edit => &["conv_his", "response_A", "response_B", "critique"],
        }
    }

    pub fn body(self) -> &'static str {
        match self {
            TemplateId::Grm => GRM_TEMPLATE,
            TemplateId::SimilarityCore => SIMILARITY_CORE_TEMPLATE,
            TemplateId::SimilarityAll => SIMILARITY_ALL_TEMPLATE,
            TemplateId::MetaJudge => META_JUDGE_TEMPLATE,
            TemplateId::Edit => EDIT_TEMPLATE,
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown template id {s:?}"))
    }
}

pub type Bindings = BTreeMap<String, String>;

/// Convenience for building bindings from string pairs.
pub fn bindings<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Bindings {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("template {template} requires placeholder {{{placeholder}}} which is not bound")]
    MissingPlaceholder {
        template: TemplateId,
        placeholder: String,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("no <scores> block in judge output")]
    MissingScores { raw: String },
    #[error("missing <{tag}> in the last <scores> block")]
    MissingTag { tag: &'static str, raw: String },
    #[error("<{tag}> value {value:?} is not a number in [0, 1]")]
    BadValue {
        tag: &'static str,
        value: String,
        raw: String,
    },
}

impl ParseError {
    pub fn raw(&self) -> &str {
        match self {
            ParseError::MissingScores { raw }
            | ParseError::MissingTag { raw, .. }
            | ParseError::BadValue { raw, .. } => raw,
        }
    }
}

/// The judge's verdict did not follow the required `<choice>[[A]]</choice>` format.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("output format invalid: no unambiguous [[A]] / [[B]] verdict in the last <choice> block")]
pub struct FormatInvalid;

/// Substitute `{name}` placeholders in a single left-to-right pass.
///
/// Bound values are copied verbatim and never rescanned. Braces that do not enclose a
/// placeholder of this template are left untouched.
pub fn render_prompt(template: TemplateId, bindings: &Bindings) -> Result<String, RenderError> {
    let required = template.required_placeholders();
    for name in required {
        if !bindings.contains_key(*name) {
            return Err(RenderError::MissingPlaceholder {
                template,
                placeholder: name.to_string(),
            });
        }
    }
    let body = template.body();
    let mut out =
        String::with_capacity(body.len() + bindings.values().map(String::len).sum::<usize>());
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if required.contains(&&after[..close]) => {
                out.push_str(&bindings[&after[..close]]);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Inner text of the last `<tag>...</tag>` block, if any.
pub fn last_block<'a>(raw: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = raw.rfind(&open)? + open.len();
    let end = raw[start..].find(&close)? + start;
    Some(&raw[start..end])
}

/// Extract f1 / precision / recall from the last `<scores>` block.
pub fn parse_scores(raw: &str) -> Result<SimilarityScores, ParseError> {
    let block = last_block(raw, "scores").ok_or_else(|| ParseError::MissingScores {
        raw: raw.to_string(),
    })?;
    let value = |tag: &'static str| -> Result<f64, ParseError> {
        let text = last_block(block, tag).ok_or_else(|| ParseError::MissingTag {
            tag,
            raw: raw.to_string(),
        })?;
        let trimmed = text.trim();
        match trimmed.parse::<f64>() {
            Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
            _ => Err(ParseError::BadValue {
                tag,
                value: trimmed.to_string(),
                raw: raw.to_string(),
            }),
        }
    };
    Ok(SimilarityScores::from_judge(
        value("critique_f1")?,
        value("critique_precision")?,
        value("critique_recall")?,
    ))
}

/// Read the verdict from the last `<choice>` block. Both or neither token is invalid.
pub fn parse_choice(raw: &str) -> Result<Choice, FormatInvalid> {
    let block = last_block(raw, "choice").ok_or(FormatInvalid)?;
    match (block.contains("[[A]]"), block.contains("[[B]]")) {
        (true, false) => Ok(Choice::A),
        (false, true) => Ok(Choice::B),
        _ => Err(FormatInvalid),
    }
}

/// The critique a GRM wrote inside `<critics>`; empty when the block is absent.
pub fn parse_critics(raw: &str) -> String {
    last_block(raw, "critics")
        .map(|s| s.trim().to_string())
        .unwrap_or_default()
}

const GRM_TEMPLATE: &str = "Please act as an impartial judge and evaluate the quality of the responses provided by two AI Chatbots to the Client question displayed below.

[Client Question]

{conv_his}

[The Start of Chatbot A's Response]

{response_A}

[The End of Chatbot A's Response]

[The Start of Chatbot B's Response]

{response_B}

[The End of Chatbot B's Response]

Output your final verdict by strictly following this format:

<critics>

[Provide a brief summary of your reasoning for the choice]

</critics>

<choice>

[[A]]

</choice>

Note: Use [[A]] if A is better, or [[B]] if B is better.
";

const EDIT_TEMPLATE: &str = "[SYSTEM RULE: EDIT-ONLY MODE ENGAGED]

You are a text-processing bot. You are FORBIDDEN from answering the question. Your only function is to apply edits.

PRIMARY DIRECTIVE: Follow the <critique>. Nothing else.

1. THE EXCEPTION RULE: IF the <critique> states something is factually or mathematically wrong, you are authorized to fix ONLY THAT SINGLE PIECE OF INFORMATION. Do not explain. Do not add context. Just replace the wrong data with the correct data.

2. THE DEFAULT RULE: For everything else, if the <critique> does not explicitly order a change, you MUST NOT change it. Do not fix other errors. Do not improve style. Do not add information.

3. THE RE-CHECK RULE: Before you respond, you must check again whether the <critique> contain the content you modify.

Failure to follow these rules means you fail the task.

----------------------------------------

[Client Question]

{conv_his}

[The Start of Chatbot A's Response]

{response_A}

[The End of Chatbot A's Response]

[The Start of Chatbot B's Response]

{response_B}

[The End of Chatbot B's Response]

[The Start of Critique]

{critique}

[The End of Critique]
";

const SIMILARITY_CORE_TEMPLATE: &str = "I will provide you with a generated evaluation content and a reference evaluation content. Your task is to analyze the similarity between the <Generated Evaluation Content> and the <Reference Evaluation Content> by calculating F1 scores based on their key arguments.

Core Principle: Focus exclusively on \"Key Arguments\" - decisive reasons that are powerful enough to justify the final choice on their own. Identify these core justifications, not minor points.

## Part 1: First check

First check if the generated critique repeats the same point across multiple times. If yes, directly output without conducting part 2:

<thinking>
    Put here how the generated critique repeats points.
</thinking>

<scores>
    <critique_f1>0</critique_f1>
    <critique_precision>0</critique_precision>
    <critique_recall>0</critique_recall>
</scores>

## Part 2: Steps for F1 Score Calculation

1. Count Reference Key Arguments (N_ref):
    - Check if the reference identifies a fatal error (critical factual error, harmful statement, or fundamental misunderstanding).
        - If yes: Only this fatal error counts. Set N_ref = 1.
        - If no: Count all unique Key Arguments (decisive reasons that could justify the choice by themselves). Set N_ref to this count.

2. Count Generated Key Arguments (N_gen):
    - Identify all unique Key Arguments in the generated evaluation.
    - Set N_gen to this count.

3. Count True Positives (TP):
    - Initialize TP = 0.
    - For each reference key argument, search for a match in generated key arguments.
    - Matching Rule: Both semantic meaning and stance (which response and positive/negative) must align.
        - Example: \"Response A is more detailed\" only matches with similar praise of Response A, not Response B.
        - For fatal errors: Generated must identify the same error in the same response.
    - Each generated argument can only match once.
    - Increment TP by 1 for each valid match.

4. Calculate Scores:
    - Precision_critique: TP / N_gen (0 if N_gen = 0)
    - Recall_critique: TP / N_ref (0 if N_ref = 0)
    - CritiqueScore: 2 * (Precision * Recall) / (Precision + Recall) (0 if sum = 0)

Output Format (rounded to 4 decimal places):

<thinking>
    Put the thinking process here.
</thinking>

<scores>
    <critique_f1>CritiqueScore</critique_f1>
    <critique_precision>Precision_critique</critique_precision>
    <critique_recall>Recall_critique</critique_recall>
</scores>

<Generated Evaluation Content>

{critiques}

</Generated Evaluation Content>

<Reference Evaluation Content>

{reference_critiques}

</Reference Evaluation Content>
";

const SIMILARITY_ALL_TEMPLATE: &str = "I will provide you with a generated evaluation content and a reference evaluation content. Your task is to analyze the similarity between the <Generated Evaluation Content> and the <Reference Evaluation Content> by calculating F1 scores based on their all arguments.

## Part 1: First check

First check if the generated critique repeats the same point across multiple times. If yes, directly output without conducting part 2:

<thinking>
    Put here how the generated critique repeats points.
</thinking>

<scores>
    <critique_f1>0</critique_f1>
    <critique_precision>0</critique_precision>
    <critique_recall>0</critique_recall>
</scores>

## Part 2: Steps for F1 Score Calculation

1. Count Reference All Arguments (N_ref):
    - Check if the reference identifies a fatal error (critical factual error, harmful statement, or fundamental misunderstanding).
        - If yes: Only this fatal error counts. Set N_ref = 1.
        - If no: Count all unique Arguments (decisive reasons that could justify the choice by themselves). Set N_ref to this count.

2. Count Generated All Arguments (N_gen):
    - Identify all unique Arguments in the generated evaluation.
    - Set N_gen to this count.

3. Count True Positives (TP):
    - Initialize TP = 0.
    - For each reference argument, search for a match in generated arguments.
    - Matching Rule: Both semantic meaning and stance (which response and positive/negative) must align.
        - Example: \"Response A is more detailed\" only matches with similar praise of Response A, not Response B.
        - For fatal errors: Generated must identify the same error in the same response.
    - Each generated argument can only match once.
    - Increment TP by 1 for each valid match.

4. Calculate Scores:
    - Precision_critique: TP / N_gen (0 if N_gen = 0)
    - Recall_critique: TP / N_ref (0 if N_ref = 0)
    - CritiqueScore: 2 * (Precision * Recall) / (Precision + Recall) (0 if sum = 0)

Output Format (rounded to 4 decimal places):

<thinking>
    Put the thinking process here.
</thinking>

<scores>
    <critique_f1>CritiqueScore</critique_f1>
    <critique_precision>Precision_critique</critique_precision>
    <critique_recall>Recall_critique</critique_recall>
</scores>

<Generated Evaluation Content>

{critiques}

</Generated Evaluation Content>

<Reference Evaluation Content>

{reference_critiques}

</Reference Evaluation Content>
";

const META_JUDGE_TEMPLATE: &str = "You are an expert evaluator tasked with assessing the quality of critiques comparing two responses.

You will be given:
1. A conversation history
2. Response A
3. Response B
4. One or more critiques comparing Response A and Response B

Your task is to evaluate whether the critique(s) are accurate and correct based on the actual content of the responses. Assign a score between 0 and 1, where higher scores indicate more accurate critiques.

You must provide your response in the following XML format:

<thinking>
    Put your detailed analysis here. Examine the critique
    against the actual responses and explain your reasoning
    for the score.
</thinking>

<scores>
    <critique_f1>Score</critique_f1>
    <critique_precision>Score</critique_precision>
    <critique_recall>Score</critique_recall>
</scores>

Note: Assign the same score to all three metrics (critique_f1, critique_precision, and critique_recall).

<Conversation History>

{conv_his}

</Conversation History>

<Response A>

{response_A}

</Response A>

<Response B>

{response_B}

</Response B>

<Critiques>

{critiques}

</Critiques>
";
