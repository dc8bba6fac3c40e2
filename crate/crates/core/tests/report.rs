use std::fs;
use std::path::Path;

use nlhf_core::eval::report::{emit_report, load_series, ReportError};
use nlhf_core::orchestrator::metrics::{write_metrics_csv, StepMetrics, METRIC_COLUMNS};

fn rows(n: usize, phase: f64) -> Vec<StepMetrics> {
    (0..n)
        .map(|s| StepMetrics {
            step: s,
            outcome_accuracy: 0.5 + 0.4 * ((s as f64 + phase) * 0.1).sin().abs(),
            mean_similarity_f1: s as f64 / n as f64,
            metarm_mae_vs_oracle: (s % 3 != 0).then(|| 0.1 + phase * 0.01),
            p_process0_given_outcome1: Some(0.25),
            p_process1_given_outcome0: None,
            mean_argument_count: 2.0 + phase,
        })
        .collect()
}

fn write(dir: &Path, name: &str, rows: &[StepMetrics]) -> std::path::PathBuf {
    let d = dir.join(name);
    fs::create_dir_all(&d).unwrap();
    let p = d.join("metrics.csv");
    write_metrics_csv(fs::File::create(&p).unwrap(), rows).unwrap();
    p
}

#[test]
fn two_regimes_give_three_plots_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let a = rows(100, 0.0);
    let b = rows(100, 3.0);
    let files = vec![
        write(dir.path(), "online_metarm", &a),
        write(dir.path(), "outcome_only", &b),
    ];
    let series = load_series(&files).unwrap();
    assert_eq!(series[0].label, "online_metarm");
    let out = dir.path().join("report");
    let written = emit_report(&series, &out).unwrap();
    assert_eq!(written.len(), 4);
    assert_eq!(fs::read_dir(&out).unwrap().count(), 4);
    for p in &written[..3] {
        let svg = fs::read_to_string(p).unwrap();
        assert!(
            svg.starts_with("<svg")
                && svg.contains("online_metarm")
                && svg.contains("outcome_only")
        );
    }

    let mut reader = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 2);
    let col = |r: &csv::StringRecord, name: &str| -> f64 {
        r[headers.iter().position(|h| h == name).unwrap()]
            .parse()
            .unwrap()
    };
    for (r, src) in records.iter().zip([&a, &b]) {
        let n = src.len() as f64;
        let acc: f64 = src.iter().map(|m| m.outcome_accuracy).sum::<f64>() / n;
        let f1: f64 = src.iter().map(|m| m.mean_similarity_f1).sum::<f64>() / n;
        let maes: Vec<f64> = src.iter().filter_map(|m| m.metarm_mae_vs_oracle).collect();
        let mae = maes.iter().sum::<f64>() / maes.len() as f64;
        assert!((col(r, "mean_outcome_accuracy") - acc).abs() < 1e-12);
        assert!((col(r, "mean_similarity_f1") - f1).abs() < 1e-12);
        assert!((col(r, "mean_metarm_mae_vs_oracle") - mae).abs() < 1e-12);
        assert_eq!(col(r, "steps"), 100.0);
        assert_eq!(
            &r[headers
                .iter()
                .position(|h| h == "mean_p_process1_given_outcome0")
                .unwrap()],
            ""
        );
    }

    let again = dir.path().join("report2");
    emit_report(&series, &again).unwrap();
    for f in [
        "similarity_f1.svg",
        "outcome_accuracy.svg",
        "metarm_mae.svg",
        "summary.csv",
    ] {
        assert_eq!(
            fs::read(out.join(f)).unwrap(),
            fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn header_only_input_gives_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("metrics.csv");
    fs::write(&p, format!("{}\n", METRIC_COLUMNS.join(","))).unwrap();
    let series = load_series(&[p]).unwrap();
    assert!(series[0].rows.is_empty());
    let written = emit_report(&series, &dir.path().join("r")).unwrap();
    assert_eq!(written.len(), 4);
    let summary = fs::read_to_string(dir.path().join("r/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1);
}

#[test]
fn missing_columns_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("metrics.csv");
    fs::write(&p, "step,outcome_accuracy\n0,0.5\n").unwrap();
    let err = load_series(&[p]).unwrap_err();
    assert!(matches!(err, ReportError::Metrics { .. }));
    let msg = err.to_string();
    assert!(
        msg.contains("mean_similarity_f1") && msg.contains("metarm_mae_vs_oracle"),
        "{msg}"
    );
}
