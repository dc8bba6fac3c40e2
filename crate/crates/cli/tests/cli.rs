use std::path::Path;
use std::process::Command;

use nlhf_core::preference::{Argument, ArgumentSet, Choice, Polarity};

fn nlhf(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_nlhf"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "nlhf {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn gen_data_then_train_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("online");
    let cfg = configs().join("default.cfg");
    let cfg = cfg.to_str().unwrap();

    nlhf(&["gen-data", "--config", cfg, "--out", data.to_str().unwrap()]);
    assert!(data.join("environment.json").exists());
    assert!(data.join("samples.jsonl").exists());

    let summary = nlhf(&[
        "train",
        "--config",
        cfg,
        "--data",
        data.to_str().unwrap(),
        "--steps",
        "5",
        "--set",
        "eval_samples=20",
        "--out",
        run.to_str().unwrap(),
    ]);
    let eval: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert!(eval["outcome_accuracy"].as_f64().is_some());
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 6);

    let report = dir.path().join("report");
    nlhf(&[
        "report",
        "--out",
        report.to_str().unwrap(),
        run.join("metrics.csv").to_str().unwrap(),
    ]);
    for f in [
        "similarity_f1.svg",
        "outcome_accuracy.svg",
        "metarm_mae.svg",
        "summary.csv",
    ] {
        assert!(report.join(f).exists(), "{f}");
    }
}

#[test]
fn shipped_configs_parse() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        nlhf_core::orchestrator::TrainConfig::parse(&text)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn score_prints_similarity() {
    let dir = tempfile::tempdir().unwrap();
    let reference = ArgumentSet::new(vec![
        Argument::new("k1", Choice::A, Polarity::Positive),
        Argument::new("k2", Choice::B, Polarity::Negative),
    ]);
    let generated = ArgumentSet::new(vec![Argument::new("k1", Choice::A, Polarity::Positive)]);
    let (r, g) = (dir.path().join("r.json"), dir.path().join("g.json"));
    std::fs::write(&r, serde_json::to_string(&reference).unwrap()).unwrap();
    std::fs::write(&g, serde_json::to_string(&generated).unwrap()).unwrap();

    let out = nlhf(&[
        "score",
        "--mode",
        "all",
        "--reference",
        r.to_str().unwrap(),
        "--generated",
        g.to_str().unwrap(),
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["precision"], 1.0);
    assert_eq!(v["recall"], 0.5);
    assert_eq!(v["process_reward"], 1);
}

#[test]
fn bon_over_candidate_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let lines: Vec<String> = [0.2, 0.9, 0.4, 0.1, 0.7]
        .iter()
        .enumerate()
        .map(|(i, q)| format!(r#"{{"id":"c{i}","text":"answer {i}","quality":{q}}}"#))
        .collect();
    std::fs::write(&path, lines.join("\n")).unwrap();
    let out = nlhf(&[
        "eval-bon",
        "--candidates",
        path.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert!(out.contains("c1"), "{out}");
}
