//! Curves and a summary table from one or more metrics CSVs.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::Serialize;

use crate::orchestrator::metrics::{read_metrics_csv, MetricsReadError, StepMetrics};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Metrics {
        path: PathBuf,
        #[source]
        source: MetricsReadError,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("plot {file}: {message}")]
    Plot { file: String, message: String },
}

/// One run's metrics under a display label.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub rows: Vec<StepMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub label: String,
    pub steps: usize,
    pub mean_outcome_accuracy: f64,
    pub mean_similarity_f1: f64,
    pub mean_metarm_mae_vs_oracle: Option<f64>,
    pub mean_p_process0_given_outcome1: Option<f64>,
    pub mean_p_process1_given_outcome0: Option<f64>,
    pub mean_argument_count: f64,
    pub final_outcome_accuracy: f64,
    pub final_similarity_f1: f64,
}

/// Plot files written by [`emit_report`], as `(file name, y label, column)`.
pub const PLOTS: [(&str, &str, fn(&StepMetrics) -> Option<f64>); 3] = [
    ("similarity_f1.svg", "mean similarity F1", |m| {
        Some(m.mean_similarity_f1)
    }),
    ("outcome_accuracy.svg", "outcome accuracy", |m| {
        Some(m.outcome_accuracy)
    }),
    ("metarm_mae.svg", "MetaRM MAE vs oracle", |m| {
        m.metarm_mae_vs_oracle
    }),
];

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn summarize(series: &Series) -> Option<SummaryRow> {
    let rows = &series.rows;
    let last = rows.last()?;
    Some(SummaryRow {
        label: series.label.clone(),
        steps: rows.len(),
        mean_outcome_accuracy: mean(rows.iter().map(|m| m.outcome_accuracy))?,
        mean_similarity_f1: mean(rows.iter().map(|m| m.mean_similarity_f1))?,
        mean_metarm_mae_vs_oracle: mean(rows.iter().filter_map(|m| m.metarm_mae_vs_oracle)),
        mean_p_process0_given_outcome1: mean(
            rows.iter().filter_map(|m| m.p_process0_given_outcome1),
        ),
        mean_p_process1_given_outcome0: mean(
            rows.iter().filter_map(|m| m.p_process1_given_outcome0),
        ),
        mean_argument_count: mean(rows.iter().map(|m| m.mean_argument_count))?,
        final_outcome_accuracy: last.outcome_accuracy,
        final_similarity_f1: last.mean_similarity_f1,
    })
}

/// Label a metrics file by its directory name (`runs/online_metarm/metrics.csv` →
/// `online_metarm`), falling back to the file stem.
pub fn label_for(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    if stem == "metrics" {
        if let Some(dir) = path
            .parent()
            .and_then(Path::file_name)
            .and_then(|s| s.to_str())
        {
            return dir.to_string();
        }
    }
    stem.to_string()
}

pub fn load_series(paths: &[PathBuf]) -> Result<Vec<Series>, ReportError> {
    paths
        .iter()
        .map(|p| {
            let rows = read_metrics_csv(File::open(p)?).map_err(|source| ReportError::Metrics {
                path: p.clone(),
                source,
            })?;
            Ok(Series {
                label: label_for(p),
                rows,
            })
        })
        .collect()
}

fn plot(
    path: &Path,
    y_label: &str,
    column: fn(&StepMetrics) -> Option<f64>,
    series: &[Series],
) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let points: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.rows
                .iter()
                .filter_map(|m| column(m).map(|v| (m.step as f64, v)))
                .collect()
        })
        .collect();
    let all = points.iter().flatten();
    let x_max = all.clone().map(|p| p.0).fold(1.0, f64::max);
    let y_max = all.clone().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let y_min = all.map(|p| p.1).fold(f64::INFINITY, f64::min);
    let (y_min, y_max) = if y_min.is_finite() && y_max > y_min {
        (y_min.min(0.0), y_max * 1.05)
    } else {
        (0.0, 1.0)
    };

    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(y_label, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(32)
        .y_label_area_size(48)
        .build_cartesian_2d(0.0..x_max, y_min..y_max)?;
    chart
        .configure_mesh()
        .x_desc("step")
        .y_desc(y_label)
        .draw()?;
    for (i, (s, pts)) in series.iter().zip(points).enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))?
            .label(s.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    if !series.is_empty() {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()?;
    }
    root.present()?;
    Ok(())
}

/// Writes the three curve plots and `summary.csv` into `out_dir`; returns the paths.
pub fn emit_report(series: &[Series], out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (file, y_label, column) in PLOTS {
        let path = out_dir.join(file);
        plot(&path, y_label, column, series).map_err(|e| ReportError::Plot {
            file: file.to_string(),
            message: e.to_string(),
        })?;
        written.push(path);
    }
    let summary = out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary)?;
    let rows: Vec<SummaryRow> = series.iter().filter_map(summarize).collect();
    if rows.is_empty() {
        w.write_record([
            "label",
            "steps",
            "mean_outcome_accuracy",
            "mean_similarity_f1",
            "mean_metarm_mae_vs_oracle",
            "mean_p_process0_given_outcome1",
            "mean_p_process1_given_outcome0",
            "mean_argument_count",
            "final_outcome_accuracy",
            "final_similarity_f1",
        ])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    written.push(summary);
    Ok(written)
}
