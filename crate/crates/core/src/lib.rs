//! Natural-language human feedback for pairwise preference modeling: critique similarity,
//! composite rewards, a meta reward model, GRPO on a toy policy, and evaluation tooling.

pub mod environment;
pub mod eval;
pub mod grpo;
pub mod judge;
pub mod metarm;
pub mod orchestrator;
pub mod policy;
pub mod preference;
pub mod prompt;
pub mod reward;
pub mod seeds;
pub mod similarity;
