//! Versioned JSON checkpoint for the policy parameters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::policy::{PolicyLayout, ToyPolicy};

pub const POLICY_FORMAT: &str = "nlhf-policy";
pub const POLICY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format: String,
    pub version: u32,
    pub config_digest: String,
    pub step: usize,
    pub layout: PolicyLayout,
    pub weights: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint {format} v{version}")]
    Unsupported { format: String, version: u32 },
    #[error("layout needs {expected} weights, file has {got}")]
    Shape { expected: usize, got: usize },
}

impl PolicyCheckpoint {
    pub fn new(policy: &ToyPolicy, config_digest: &str, step: usize) -> Self {
        PolicyCheckpoint {
            format: POLICY_FORMAT.into(),
            version: POLICY_FORMAT_VERSION,
            config_digest: config_digest.into(),
            step,
            layout: policy.layout,
            weights: policy.weights.clone(),
        }
    }

    pub fn policy(&self) -> ToyPolicy {
        ToyPolicy {
            layout: self.layout,
            weights: self.weights.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let c: PolicyCheckpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if c.format != POLICY_FORMAT || c.version != POLICY_FORMAT_VERSION {
            return Err(CheckpointError::Unsupported {
                format: c.format,
                version: c.version,
            });
        }
        if c.weights.len() != c.layout.n_params() {
            return Err(CheckpointError::Shape {
                expected: c.layout.n_params(),
                got: c.weights.len(),
            });
        }
        Ok(c)
    }
}
