//! Test-time scaling with a pairwise judge and reporting over training metrics.

pub mod feedback;
pub mod report;
pub mod tournament;

pub use feedback::{feedback_edit, EditOutcome};
pub use report::{emit_report, load_series, Series, SummaryRow};
pub use tournament::{
    bon_select, double_elimination, MatchRecord, TournamentError, TournamentResult,
};
