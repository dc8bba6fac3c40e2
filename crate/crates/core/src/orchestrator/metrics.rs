//! Per-step metrics, the outcome/process inconsistency counts, and the metrics CSV.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::reward::PROCESS_THRESHOLD;

/// Column order of the metrics CSV.
pub const METRIC_COLUMNS: [&str; 7] = [
    "step",
    "outcome_accuracy",
    "mean_similarity_f1",
    "metarm_mae_vs_oracle",
    "p_process0_given_outcome1",
    "p_process1_given_outcome0",
    "mean_argument_count",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub outcome_accuracy: f64,
    pub mean_similarity_f1: f64,
    pub metarm_mae_vs_oracle: Option<f64>,
    pub p_process0_given_outcome1: Option<f64>,
    pub p_process1_given_outcome0: Option<f64>,
    pub mean_argument_count: f64,
}

/// Wall-clock seconds per phase. Kept out of the metrics CSV so that file is reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub step: usize,
    pub rollout_and_human_scoring: f64,
    pub metarm_update: f64,
    pub metarm_scoring: f64,
    pub policy_update: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredOutcome {
    pub outcome_correct: bool,
    pub similarity: f64,
}

/// `(P(process = 0 | outcome = 1), P(process = 1 | outcome = 0))`, each absent when
/// nothing is conditioned on. Process is 1 iff similarity exceeds `threshold`.
pub fn inconsistency_metrics(
    records: &[ScoredOutcome],
    threshold: f64,
) -> (Option<f64>, Option<f64>) {
    let mut counts = [[0usize; 2]; 2];
    for r in records {
        let process = usize::from(r.similarity > threshold);
        counts[usize::from(r.outcome_correct)][process] += 1;
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    (
        ratio(counts[1][0], counts[1][0] + counts[1][1]),
        ratio(counts[0][1], counts[0][0] + counts[0][1]),
    )
}

pub fn default_inconsistency(records: &[ScoredOutcome]) -> (Option<f64>, Option<f64>) {
    inconsistency_metrics(records, PROCESS_THRESHOLD)
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[StepMetrics]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRIC_COLUMNS)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for m in rows {
        w.write_record([
            m.step.to_string(),
            m.outcome_accuracy.to_string(),
            m.mean_similarity_f1.to_string(),
            opt(m.metarm_mae_vs_oracle),
            opt(m.p_process0_given_outcome1),
            opt(m.p_process1_given_outcome0),
            m.mean_argument_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timings_csv<W: Write>(out: W, rows: &[PhaseTimings]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for t in rows {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsReadError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("missing columns: {}", .0.join(", "))]
    MissingColumns(Vec<String>),
    #[error("row {row}: bad value {value:?} in column {column}")]
    BadValue {
        row: usize,
        column: String,
        value: String,
    },
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<StepMetrics>, MetricsReadError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let missing: Vec<String> = METRIC_COLUMNS
        .iter()
        .filter(|c| !headers.iter().any(|h| h == **c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsReadError::MissingColumns(missing));
    }
    let index: Vec<usize> = METRIC_COLUMNS
        .iter()
        .map(|c| headers.iter().position(|h| h == *c).expect("checked above"))
        .collect();
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let cell = |c: usize| record.get(index[c]).unwrap_or("");
        let bad = |c: usize| MetricsReadError::BadValue {
            row: i + 1,
            column: METRIC_COLUMNS[c].to_string(),
            value: cell(c).to_string(),
        };
        let num = |c: usize| cell(c).parse::<f64>().map_err(|_| bad(c));
        let opt = |c: usize| {
            if cell(c).is_empty() {
                Ok(None)
            } else {
                num(c).map(Some)
            }
        };
        rows.push(StepMetrics {
            step: cell(0).parse().map_err(|_| bad(0))?,
            outcome_accuracy: num(1)?,
            mean_similarity_f1: num(2)?,
            metarm_mae_vs_oracle: opt(3)?,
            p_process0_given_outcome1: opt(4)?,
            p_process1_given_outcome0: opt(5)?,
            mean_argument_count: num(6)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(outcome_correct: bool, similarity: f64) -> ScoredOutcome {
        ScoredOutcome {
            outcome_correct,
            similarity,
        }
    }

    #[test]
    fn inconsistency_counting() {
        let all_good: Vec<_> = (0..5).map(|_| rec(true, 1.0)).collect();
        assert_eq!(default_inconsistency(&all_good), (Some(0.0), None));

        let mut ten: Vec<_> = (0..7).map(|_| rec(true, 0.8)).collect();
        ten.extend((0..3).map(|_| rec(true, 0.5)));
        assert_eq!(default_inconsistency(&ten).0, Some(0.3));
        assert_eq!(default_inconsistency(&[]), (None, None));
    }

    #[test]
    fn csv_round_trip_with_absent_values() {
        let rows = vec![
            StepMetrics {
                step: 0,
                outcome_accuracy: 0.5,
                mean_similarity_f1: 0.125,
                metarm_mae_vs_oracle: None,
                p_process0_given_outcome1: Some(0.75),
                p_process1_given_outcome0: None,
                mean_argument_count: 2.0,
            },
            StepMetrics {
                step: 1,
                outcome_accuracy: 1.0,
                mean_similarity_f1: 0.3,
                metarm_mae_vs_oracle: Some(0.1),
                p_process0_given_outcome1: Some(0.0),
                p_process1_given_outcome0: Some(1.0),
                mean_argument_count: 1.5,
            },
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&METRIC_COLUMNS.join(",")));
        assert!(text.contains("0,0.5,0.125,,0.75,,2\n"));
        assert_eq!(read_metrics_csv(buf.as_slice()).unwrap(), rows);

        let mut empty = Vec::new();
        write_metrics_csv(&mut empty, &[]).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().lines().count(), 1);
    }

    #[test]
    fn missing_columns_are_named() {
        let err = read_metrics_csv("step,outcome_accuracy\n".as_bytes()).unwrap_err();
        match err {
            MetricsReadError::MissingColumns(cols) => {
                assert!(cols.contains(&"mean_similarity_f1".to_string()))
            }
            other => panic!("{other}"),
        }
    }
}
