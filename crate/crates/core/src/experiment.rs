//! Command implementations shared by the binary and the test suites. Each
//! command writes its artifacts plus `manifest.json` and `config.toml` to
//! the configured output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::dqn::{training_loop, HistoryRecord, TrainOutcome};
use crate::env::{Corner, Env};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, baseline_env_config, compare, read_logs, run_episodes, write_logs, Comparison, EpisodeLog, EvalSummary, GreedyPolicy,
    PlanPolicy, RandomWalk,
};
use crate::field::generate_field;
use crate::nn::{load_params, save_params};
use crate::render::render_svg;
use crate::rng::{streams, RngStream};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const FINAL_CHECKPOINT: &str = "final.bin";
pub const HISTORY: &str = "history.tsv";
pub const EPISODES: &str = "episodes.jsonl";
pub const SUMMARY: &str = "summary.tsv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const CURVE: &str = "curve.tsv";
pub const COMPARISON: &str = "comparison.tsv";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn prepare(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write(&cfg.out_dir.join(CONFIG), cfg.to_toml()?)?;
    Ok(cfg.out_dir.clone())
}

fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig, started: Instant, extra: serde_json::Value) -> Result<()> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config": cfg,
        "wall_time_secs": started.elapsed().as_secs_f64(),
        "result": extra,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    write(&dir.join(MANIFEST), text + "\n")
}

fn to_json(v: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).expect("serialisable")
}

pub struct TrainReport {
    pub outcome: TrainOutcome,
    pub out_dir: PathBuf,
}

/// Train, then write the best and final checkpoints and the history.
pub fn cmd_train(cfg: &ExperimentConfig, progress: &mut dyn FnMut(&HistoryRecord)) -> Result<TrainReport> {
    let started = Instant::now();
    let dir = prepare(cfg)?;
    let net = cfg.network.build(&cfg.env)?;
    let env_cfg = cfg.env.clone();
    let factory = move |s: u64| Env::reset(&env_cfg, s);
    let outcome = training_loop(&net, &factory, &cfg.train, cfg.seed, progress)?;

    save_params(&dir.join(CHECKPOINT), &net, &outcome.best)?;
    save_params(&dir.join(FINAL_CHECKPOINT), &net, &outcome.final_params)?;
    let mut history = String::from(HistoryRecord::TSV_HEADER);
    history.push('\n');
    for r in &outcome.history {
        history.push_str(&r.to_tsv());
        history.push('\n');
    }
    write(&dir.join(HISTORY), history)?;
    write_manifest(
        &dir,
        "train",
        cfg,
        started,
        json!({
            "param_count": net.param_count(),
            "spec_hash": format!("{:016x}", net.spec().hash()),
            "env_steps": outcome.env_steps,
            "train_steps": outcome.train_steps,
            "episodes": outcome.episodes,
            "best": outcome.best_record.map(|r| to_json(&r)),
            "final_validation": outcome.history.last().map(|r| to_json(r)),
        }),
    )?;
    Ok(TrainReport { outcome, out_dir: dir })
}

/// Which policy an evaluation runs.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyChoice {
    Greedy(PathBuf),
    Baseline,
    Random,
}

pub struct EvalReport {
    pub logs: Vec<EpisodeLog>,
    pub summary: EvalSummary,
    pub out_dir: PathBuf,
}

fn write_eval(dir: &Path, logs: &[EpisodeLog], summary: &EvalSummary) -> Result<()> {
    write_logs(&dir.join(EPISODES), logs)?;
    write(&dir.join(SUMMARY), summary.to_tsv())?;
    write(&dir.join(CURVE), summary.curve_tsv())?;
    let json = serde_json::to_string_pretty(summary).map_err(|e| Error::Parse(e.to_string()))?;
    write(&dir.join(SUMMARY_JSON), json + "\n")
}

/// Run `cfg.eval.n_episodes` episodes of a policy and write logs and summary.
pub fn cmd_evaluate(cfg: &ExperimentConfig, policy: &PolicyChoice) -> Result<EvalReport> {
    let started = Instant::now();
    let dir = prepare(cfg)?;
    let n = cfg.eval.n_episodes;
    let (logs, command) = match policy {
        PolicyChoice::Greedy(path) => {
            let net = cfg.network.build(&cfg.env)?;
            let params = load_params(path, &net)?;
            (run_episodes(|| GreedyPolicy::new(&net, &params), &cfg.env, cfg.seed, n)?, "evaluate")
        }
        PolicyChoice::Baseline => (run_episodes(PlanPolicy::default, &baseline_env_config(&cfg.env), cfg.seed, n)?, "baseline"),
        PolicyChoice::Random => (run_episodes(RandomWalk::default, &cfg.env, cfg.seed, n)?, "random"),
    };
    let summary = aggregate(&logs, &cfg.eval.checkpoints)?;
    write_eval(&dir, &logs, &summary)?;
    let checkpoint = match policy {
        PolicyChoice::Greedy(p) => Some(p.display().to_string()),
        _ => None,
    };
    write_manifest(&dir, command, cfg, started, json!({ "checkpoint": checkpoint, "summary": to_json(&summary) }))?;
    Ok(EvalReport { logs, summary, out_dir: dir })
}

/// Compare the episode logs of two evaluation directories.
pub fn cmd_compare(cfg: &ExperimentConfig, dir_a: &Path, dir_b: &Path) -> Result<Comparison> {
    let started = Instant::now();
    let a = read_logs(&dir_a.join(EPISODES))?;
    let b = read_logs(&dir_b.join(EPISODES))?;
    let label = |d: &Path| d.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| d.display().to_string());
    let table = compare(&label(dir_a), &a, &label(dir_b), &b, &cfg.eval.checkpoints, cfg.eval.alpha)?;
    let dir = prepare(cfg)?;
    write(&dir.join(COMPARISON), table.to_tsv())?;
    write_manifest(
        &dir,
        "compare",
        cfg,
        started,
        json!({ "a": dir_a.display().to_string(), "b": dir_b.display().to_string(), "comparison": to_json(&table) }),
    )?;
    Ok(table)
}

/// Render episode `index` of a log file to SVG.
pub fn cmd_render(log_path: &Path, index: usize, out: &Path) -> Result<()> {
    let logs = read_logs(log_path)?;
    let log = logs
        .get(index)
        .ok_or_else(|| Error::Usage(format!("{} holds {} episodes, asked for #{index}", log_path.display(), logs.len())))?;
    write(out, render_svg(log))
}

/// Write one generated field (and its start corner) as text.
pub fn cmd_generate_field(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.env.field.validate()?;
    let field = generate_field(&cfg.env.field, &mut RngStream::new(cfg.seed, streams::FIELD))?;
    let corner = if RngStream::new(cfg.seed, streams::START).next_bool(0.5) { Corner::BottomRight } else { Corner::TopLeft };
    let mut text = field.to_text(cfg.seed, cfg.env.field.kind);
    text.insert_str(0, &format!("# start {corner:?}\n"));
    write(out, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn smoke_cfg(dir: &Path) -> ExperimentConfig {
        let mut cfg = parse_config(
            &["desk-scale".into()],
            None,
            &[
                "train.n_steps=1000".into(),
                "train.n_buffer=400".into(),
                "train.val_interval=50".into(),
                "train.n_val=4".into(),
                "eval.n_episodes=3".into(),
            ],
        )
        .unwrap();
        cfg.out_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn train_smoke_run_writes_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = smoke_cfg(&tmp.path().join("train"));
        let report = cmd_train(&cfg, &mut |_| {}).unwrap();
        for f in [CHECKPOINT, HISTORY, MANIFEST, CONFIG] {
            assert!(report.out_dir.join(f).exists(), "{f}");
        }
        assert!(!report.outcome.history.is_empty());

        let mut eval_cfg = cfg.clone();
        eval_cfg.out_dir = tmp.path().join("eval");
        let ev = cmd_evaluate(&eval_cfg, &PolicyChoice::Greedy(report.out_dir.join(CHECKPOINT))).unwrap();
        assert_eq!(ev.logs.len(), 3);

        let mut wrong = cfg.clone();
        wrong.network.head = vec![8];
        wrong.out_dir = tmp.path().join("wrong");
        assert!(matches!(
            cmd_evaluate(&wrong, &PolicyChoice::Greedy(report.out_dir.join(CHECKPOINT))),
            Err(Error::Compatibility(_))
        ));
    }

    #[test]
    fn baseline_and_compare() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = smoke_cfg(&tmp.path().join("base"));
        cfg.eval.n_episodes = 5;
        let base = cmd_evaluate(&cfg, &PolicyChoice::Baseline).unwrap();
        assert_eq!(base.summary.path_length.std, 0.0);
        assert_eq!(base.summary.found_fraction.mean, 1.0);
        cfg.out_dir = tmp.path().join("cmp");
        let table = cmd_compare(&cfg, &tmp.path().join("base"), &tmp.path().join("base")).unwrap();
        assert!(table.rows.iter().all(|r| r.winner_a.is_none()));

        let svg = tmp.path().join("ep.svg");
        cmd_render(&tmp.path().join("base").join(EPISODES), 0, &svg).unwrap();
        assert!(fs::read_to_string(&svg).unwrap().contains("<svg"));
        assert!(cmd_render(&tmp.path().join("base").join(EPISODES), 99, &svg).is_err());
    }
}
