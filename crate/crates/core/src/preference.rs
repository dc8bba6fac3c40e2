//! Pairwise preference samples, structured critiques and the JSONL dataset format.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema error: {message}")]
    Schema { line: usize, message: String },
}

/// Which of the two responses a label, target or verdict refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

impl Choice {
    pub fn other(self) -> Choice {
        match self {
            Choice::A => Choice::B,
            Choice::B => Choice::A,
        }
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Choice::A => f.write_str("A"),
            Choice::B => f.write_str("B"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn flip(self) -> Polarity {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

/// One point made by a critique: what is said, about which response, and with what stance.
///
/// Equality and hashing use `(content_key, target, polarity)` only; the `fatal` flag
/// marks a reference argument that dominates scoring but does not change identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Argument {
    pub content_key: String,
    pub target: Choice,
    pub polarity: Polarity,
    #[serde(default)]
    pub fatal: bool,
}

impl Argument {
    pub fn new(content_key: impl Into<String>, target: Choice, polarity: Polarity) -> Self {
        Argument {
            content_key: content_key.into(),
            target,
            polarity,
            fatal: false,
        }
    }

    pub fn fatal(mut self) -> Self {
        self.fatal = true;
        self
    }

    pub fn tuple(&self) -> (&str, Choice, Polarity) {
        (self.content_key.as_str(), self.target, self.polarity)
    }

    /// The response this argument speaks in favour of.
    pub fn supports(&self) -> Choice {
        match self.polarity {
            Polarity::Positive => self.target,
            Polarity::Negative => self.target.other(),
        }
    }
}

impl PartialEq for Argument {
    fn eq(&self, other: &Self) -> bool {
        self.tuple() == other.tuple()
    }
}

impl Eq for Argument {}

impl Hash for Argument {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.tuple().hash(state);
    }
}

impl fmt::Display for Argument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let stance = match self.polarity {
            Polarity::Positive => "praises",
            Polarity::Negative => "criticizes",
        };
        write!(
            f,
            "{} response {}: {}",
            stance, self.target, self.content_key
        )?;
        if self.fatal {
            f.write_str(" (fatal error)")?;
        }
        Ok(())
    }
}

/// An ordered critique. Duplicates are kept: they are what the repeat guard looks for.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArgumentSet {
    pub arguments: Vec<Argument>,
}

impl ArgumentSet {
    pub fn new(arguments: Vec<Argument>) -> Self {
        ArgumentSet { arguments }
    }

    pub fn len(&self) -> usize {
        self.arguments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arguments.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Argument> {
        self.arguments.iter()
    }

    /// Unique arguments in first-occurrence order.
    pub fn unique(&self) -> Vec<&Argument> {
        let mut seen = HashSet::new();
        self.arguments
            .iter()
            .filter(|a| seen.insert(a.tuple()))
            .collect()
    }

    pub fn first_fatal(&self) -> Option<&Argument> {
        self.arguments.iter().find(|a| a.fatal)
    }

    /// Plain-text rendering, one argument per line. Used wherever a judge needs text.
    pub fn to_text(&self) -> String {
        self.arguments
            .iter()
            .map(|a| format!("- {a}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl FromIterator<Argument> for ArgumentSet {
    fn from_iter<I: IntoIterator<Item = Argument>>(iter: I) -> Self {
        ArgumentSet::new(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSample {
    pub id: String,
    pub query: String,
    pub response_a: String,
    pub response_b: String,
    pub label: Choice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_critique_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_critique: Option<ArgumentSet>,
}

impl PreferenceSample {
    pub fn has_critique(&self) -> bool {
        self.human_critique.is_some()
    }
}

/// Read a JSONL dataset. Blank lines are skipped; line numbers in errors are 1-based.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<PreferenceSample>, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Vec<PreferenceSample>, DatasetError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| DatasetError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let sample: PreferenceSample =
            serde_json::from_value(value).map_err(|e| DatasetError::Schema {
                line: line_no,
                message: e.to_string(),
            })?;
        if let Some(critique) = &sample.human_critique {
            if let Some(bad) = critique.iter().find(|a| a.content_key.is_empty()) {
                return Err(DatasetError::Schema {
                    line: line_no,
                    message: format!("argument with empty content_key ({bad:?})"),
                });
            }
        }
        out.push(sample);
    }
    Ok(out)
}

/// Serialize samples as JSONL with a fixed field order.
pub fn to_jsonl(samples: &[PreferenceSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("sample serializes"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(
    path: impl AsRef<Path>,
    samples: &[PreferenceSample],
) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(to_jsonl(samples).as_bytes()).map_err(io_err)
}

/// Partition into the human-critique stream and the outcome-only stream, preserving order.
pub fn split_streams(
    samples: &[PreferenceSample],
) -> (Vec<PreferenceSample>, Vec<PreferenceSample>) {
    samples
        .iter()
        .cloned()
        .partition(PreferenceSample::has_critique)
}
