use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use nlhf_core::environment::{generate_environment, EnvironmentSpec};
use nlhf_core::eval::{self, report};
use nlhf_core::judge::{GrmJudge, LlmBackend, PairwiseJudge};
use nlhf_core::orchestrator::config::{Regime, TrainConfig};
use nlhf_core::orchestrator::run_experiment;
use nlhf_core::preference::{self, ArgumentSet, PreferenceSample};
use nlhf_core::reward::process_reward;
use nlhf_core::similarity::{
    compute_similarity, CritiqueScorer, ExactMatchScorer, JudgeScorer, MatchMode,
};
use nlhf_judge::{JudgeClient, JudgeConfig};

mod judges;

use judges::{load_candidates, EchoEditor, QualityOracle};

#[derive(Parser)]
#[command(
    name = "nlhf",
    version,
    about = "Critique-rewarded GRM training on a synthetic preference task"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum JudgeKind {
    LocalOracle,
    Remote,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "local-oracle")]
    judge: JudgeKind,
    /// Judge response cache directory for --judge remote.
    #[arg(long)]
    judge_cache: Option<PathBuf>,
}

#[derive(Args)]
struct TournamentArgs {
    #[command(flatten)]
    common: Common,
    /// JSONL with one `{"id", "text", "quality"}` object per line.
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long, default_value = "")]
    query: String,
    /// Use only the first N candidates.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic environment and dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a policy under one regime and write metrics and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        regime: Option<Regime>,
        /// Directory written by gen-data; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Extra `key=value` overrides applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Best-of-N selection by single-elimination tournament.
    EvalBon(TournamentArgs),
    /// Pointwise scores from a double-elimination tournament.
    EvalDoubleElim(TournamentArgs),
    /// Pick the top two candidates, critique them and edit the winner.
    FeedbackEdit(TournamentArgs),
    /// Score a generated critique against a reference critique.
    Score {
        #[command(flatten)]
        common: Common,
        /// JSON argument list of the reference critique.
        #[arg(long)]
        reference: PathBuf,
        /// JSON argument list of the generated critique.
        #[arg(long)]
        generated: PathBuf,
        #[arg(long, default_value = "core")]
        mode: String,
    },
    /// Plots and a summary table from metrics CSVs.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            TrainConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn remote_client(common: &Common) -> Result<JudgeClient> {
    let mut cfg = JudgeConfig::from_env();
    cfg.cache_dir = common
        .judge_cache
        .clone()
        .or_else(|| common.out.as_ref().map(|o| o.join("judge_cache")));
    if cfg.endpoint.is_none() && cfg.cache_dir.is_none() {
        bail!("--judge remote needs JUDGE_ENDPOINT or a --judge-cache to replay");
    }
    cfg.offline = cfg.endpoint.is_none();
    Ok(JudgeClient::new(cfg)?)
}

fn write_json(out: Option<&Path>, name: &str, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(name), &text)?;
    }
    println!("{text}");
    Ok(())
}

fn load_data(dir: &Path) -> Result<(EnvironmentSpec, Vec<PreferenceSample>)> {
    let env = EnvironmentSpec::load(dir.join("environment.json"))?;
    let samples = preference::load_dataset(dir.join("samples.jsonl"))?;
    Ok((env, samples))
}

fn gen_data(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let out = common.out.as_deref().context("gen-data needs --out")?;
    let (env, samples) = generate_environment(&cfg.env, cfg.seed)?;
    fs::create_dir_all(out)?;
    env.save(out.join("environment.json"))?;
    preference::save_dataset(out.join("samples.jsonl"), &samples)?;
    log::info!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

fn train(
    common: &Common,
    regime: Option<Regime>,
    data: Option<&Path>,
    steps: Option<usize>,
    overrides: &[String],
) -> Result<()> {
    let mut cfg = load_config(common)?;
    for kv in overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("override {kv:?} is not key=value"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(r) = regime {
        cfg.regime = r;
    }
    if let Some(s) = steps {
        cfg.steps = s;
    }
    cfg.validate()?;
    let (env, samples) = match data {
        Some(dir) => load_data(dir)?,
        None => generate_environment(&cfg.env, cfg.seed)?,
    };
    let client;
    let remote;
    let exact = ExactMatchScorer {
        mode: cfg.match_mode,
    };
    let scorer: &dyn CritiqueScorer = match common.judge {
        JudgeKind::LocalOracle => &exact,
        JudgeKind::Remote => {
            client = remote_client(common)?;
            remote = JudgeScorer {
                backend: &client,
                mode: cfg.match_mode,
            };
            &remote
        }
    };
    let run = run_experiment(&cfg, &env, &samples, scorer, common.out.as_deref())?;
    println!("{}", serde_json::to_string_pretty(&run.final_eval)?);
    Ok(())
}

fn tournament(kind: &str, args: &TournamentArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let mut candidates = load_candidates(&args.candidates)?;
    if let Some(n) = args.n {
        if n > candidates.len() {
            bail!("--n {n} but only {} candidates", candidates.len());
        }
        candidates.truncate(n);
    }
    let texts: Vec<String> = candidates.iter().map(|c| c.text.clone()).collect();
    let ids =
        |idx: &[usize]| -> Vec<&str> { idx.iter().map(|&i| candidates[i].id.as_str()).collect() };

    let client;
    let grm;
    let oracle;
    let (judge, editor): (&dyn PairwiseJudge, &dyn LlmBackend) = match args.common.judge {
        JudgeKind::LocalOracle => {
            oracle = QualityOracle::new(&candidates)?;
            (&oracle, &EchoEditor)
        }
        JudgeKind::Remote => {
            client = remote_client(&args.common)?;
            grm = GrmJudge { backend: &client };
            (&grm, &client)
        }
    };
    let out = args.common.out.as_deref();
    match kind {
        "bon" | "double_elim" => {
            let r = if kind == "bon" {
                eval::bon_select(&args.query, &texts, judge, cfg.seed)?
            } else {
                eval::double_elimination(&args.query, &texts, judge, cfg.seed)?
            };
            let scores: serde_json::Map<String, serde_json::Value> = candidates
                .iter()
                .zip(&r.pointwise_scores)
                .map(|(c, s)| (c.id.clone(), json!(s)))
                .collect();
            let log: Vec<_> = r
                .match_log
                .iter()
                .map(|m| {
                    json!({"a": candidates[m.a].id, "b": candidates[m.b].id,
                               "winner": candidates[m.winner].id, "swapped": m.swapped})
                })
                .collect();
            write_json(
                out,
                &format!("{kind}.json"),
                &json!({
                    "winner": candidates[r.winner].id,
                    "ranking": ids(&r.ranking),
                    "pointwise_scores": scores,
                    "match_log": log,
                }),
            )
        }
        _ => {
            let e = eval::feedback_edit(&args.query, &texts, judge, editor, cfg.seed)?;
            write_json(
                out,
                "feedback_edit.json",
                &json!({"top": ids(&e.top), "critique": e.critique, "edited": e.edited}),
            )
        }
    }
}

fn score(common: &Common, reference: &Path, generated: &Path, mode: &str) -> Result<()> {
    let read = |p: &Path| -> Result<ArgumentSet> {
        Ok(serde_json::from_str(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?)
    };
    let (reference, generated) = (read(reference)?, read(generated)?);
    let mode: MatchMode =
        serde_json::from_value(json!(mode)).context("--mode must be core or all")?;
    let scores = match common.judge {
        JudgeKind::LocalOracle => compute_similarity(&reference, &generated, mode),
        JudgeKind::Remote => {
            let client = remote_client(common)?;
            let sample = PreferenceSample {
                id: "cli".into(),
                query: String::new(),
                response_a: String::new(),
                response_b: String::new(),
                label: preference::Choice::A,
                human_critique_text: None,
                human_critique: None,
            };
            JudgeScorer {
                backend: &client,
                mode,
            }
            .score(&sample, &reference, &generated)?
        }
    };
    write_json(
        common.out.as_deref(),
        "score.json",
        &json!({
            "f1": scores.f1, "precision": scores.precision, "recall": scores.recall,
            "process_reward": process_reward(scores.f1)?,
        }),
    )
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenData { common } => gen_data(&common),
        Command::Train {
            common,
            regime,
            data,
            steps,
            overrides,
        } => train(&common, regime, data.as_deref(), steps, &overrides),
        Command::EvalBon(args) => tournament("bon", &args),
        Command::EvalDoubleElim(args) => tournament("double_elim", &args),
        Command::FeedbackEdit(args) => tournament("feedback_edit", &args),
        Command::Score {
            common,
            reference,
            generated,
            mode,
        } => score(&common, &reference, &generated, &mode),
        Command::Report { out, metrics } => {
            let series = report::load_series(&metrics)?;
            for path in report::emit_report(&series, &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}
