//! Episode execution, episode logs, aggregation and policy comparison.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::plan_row_by_row;
use crate::dqn::{greedy_action, softmax_probs};
use crate::env::{Action, Env, EnvConfig, Observation, StepRecord, StoppingCriterion};
use crate::error::{Error, Result};
use crate::nn::{NetworkParams, QNetwork};
use crate::rng::{streams, RngStream};
use crate::stats::{welch_t_test, Stat, WelchResult};

/// Chooses actions during an evaluation episode.
pub trait Policy {
    /// Called once after reset.
    fn begin(&mut self, _env: &Env, _seed: u64) -> Result<()> {
        Ok(())
    }

    /// Next action, or `None` to end the episode early.
    fn act(&mut self, env: &Env, obs: &Observation) -> Result<Option<Action>>;

    /// Action values behind the last decision, if the policy has them.
    fn last_values(&self) -> Option<&[f64]> {
        None
    }
}

/// Deterministic argmax over the network's action values.
pub struct GreedyPolicy<'a> {
    net: &'a QNetwork,
    params: &'a NetworkParams<f32>,
    values: Vec<f64>,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(net: &'a QNetwork, params: &'a NetworkParams<f32>) -> Self {
        Self { net, params, values: Vec::new() }
    }
}

impl Policy for GreedyPolicy<'_> {
    fn act(&mut self, _env: &Env, obs: &Observation) -> Result<Option<Action>> {
        let q = self.net.forward(self.params, &obs.net_input())?;
        self.values = q.into_iter().map(f64::from).collect();
        let a = greedy_action(&self.values);
        Action::from_index(a)
            .map(Some)
            .ok_or_else(|| Error::Structural(format!("network has {} outputs", self.values.len())))
    }

    fn last_values(&self) -> Option<&[f64]> {
        Some(&self.values)
    }
}

/// Follows the row-by-row coverage plan for the episode's start corner and
/// stops when the plan is exhausted.
#[derive(Debug, Default)]
pub struct PlanPolicy {
    actions: Vec<Action>,
    next: usize,
}

impl Policy for PlanPolicy {
    fn begin(&mut self, env: &Env, _seed: u64) -> Result<()> {
        let cfg = env.config();
        self.actions = plan_row_by_row(cfg.m(), cfg.fov, env.state().start)?.actions;
        self.next = 0;
        Ok(())
    }

    fn act(&mut self, _env: &Env, _obs: &Observation) -> Result<Option<Action>> {
        let a = self.actions.get(self.next).copied();
        self.next += 1;
        Ok(a)
    }
}

/// Environment settings the coverage baseline is flown under: the whole
/// plan is always completed, so its path length does not depend on the field.
pub fn baseline_env_config(cfg: &EnvConfig) -> EnvConfig {
    EnvConfig { stopping: StoppingCriterion::Never, ..cfg.clone() }
}

/// Uniform random moves from a per-episode stream.
#[derive(Debug)]
pub struct RandomWalk {
    rng: RngStream,
}

impl Default for RandomWalk {
    fn default() -> Self {
        Self { rng: RngStream::new(0, streams::POLICY) }
    }
}

impl Policy for RandomWalk {
    fn begin(&mut self, _env: &Env, seed: u64) -> Result<()> {
        self.rng = RngStream::new(seed, streams::POLICY);
        Ok(())
    }

    fn act(&mut self, _env: &Env, _obs: &Observation) -> Result<Option<Action>> {
        Ok(Some(Action::MOVES[self.rng.next_below(4)]))
    }
}

/// Lands immediately.
#[derive(Debug, Default)]
pub struct AlwaysLand;

impl Policy for AlwaysLand {
    fn act(&mut self, _env: &Env, _obs: &Observation) -> Result<Option<Action>> {
        Ok(Some(Action::Land))
    }
}

/// Hash of the environment configuration; logs from different
/// configurations are not aggregated together.
pub fn config_fingerprint(cfg: &EnvConfig) -> u64 {
    let json = serde_json::to_string(cfg).expect("config serialises");
    json.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeedRecord {
    pub row: usize,
    pub col: usize,
    /// Step at which the weed was first detected; 0 means at reset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub found_step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub fingerprint: u64,
    pub seed: u64,
    pub m: usize,
    pub fov: usize,
    pub start: (usize, usize),
    pub weeds: Vec<WeedRecord>,
    pub initial_found: usize,
    pub records: Vec<StepRecord>,
    /// Action values per step, when the policy exposes them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<Vec<f64>>,
    pub steps: usize,
    /// Movement actions taken (landing excluded).
    pub path_length: usize,
    pub found: usize,
    pub found_fraction: f64,
    pub reward_sum: f64,
    /// Done reason, or `plan_complete` when the policy stopped on its own.
    pub end_reason: String,
}

impl EpisodeLog {
    pub fn n_weeds(&self) -> usize {
        self.weeds.len()
    }

    /// Found count after `t` steps, holding the final value past the end.
    pub fn found_at(&self, t: usize) -> usize {
        if t == 0 || self.records.is_empty() {
            return self.initial_found;
        }
        self.records[t.min(self.records.len()) - 1].cumulative_found
    }

    fn fraction(&self, found: usize) -> f64 {
        if self.weeds.is_empty() {
            1.0
        } else {
            found as f64 / self.weeds.len() as f64
        }
    }

    /// First step at which at least `fraction` of the weeds are found.
    pub fn step_reaching(&self, fraction: f64) -> Option<usize> {
        if self.fraction(self.initial_found) >= fraction {
            return Some(0);
        }
        self.records.iter().find(|r| self.fraction(r.cumulative_found) >= fraction).map(|r| r.step)
    }
}

pub fn found_fraction_at(log: &EpisodeLog, t: usize) -> f64 {
    log.fraction(log.found_at(t))
}

/// Reset with `seed` and run `policy` until the episode ends.
pub fn run_episode(policy: &mut dyn Policy, cfg: &EnvConfig, seed: u64) -> Result<EpisodeLog> {
    let (env, obs) = Env::reset(cfg, seed)?;
    run_episode_from(policy, env, obs, seed)
}

/// Run `policy` on an already reset environment.
pub fn run_episode_from(policy: &mut dyn Policy, mut env: Env, mut obs: Observation, seed: u64) -> Result<EpisodeLog> {
    policy.begin(&env, seed)?;
    let st = env.state();
    let mut weeds: Vec<WeedRecord> = st
        .field
        .weeds
        .iter()
        .zip(&st.found)
        .map(|(w, &f)| {
            let (row, col) = w.cell();
            WeedRecord { row, col, found_step: f.then_some(0) }
        })
        .collect();
    let start = st.drone;
    let initial_found = st.total_found;
    let mut records = Vec::new();
    let mut values = Vec::new();
    let mut reward_sum = 0.0;
    let mut path_length = 0;
    let mut stopped_by_policy = false;

    while !env.state().done() {
        let Some(action) = policy.act(&env, &obs)? else {
            stopped_by_policy = true;
            break;
        };
        if let Some(v) = policy.last_values() {
            values.push(v.to_vec());
        }
        let res = env.step(action)?;
        let st = env.state();
        if res.info.newly_found > 0 {
            for (w, &f) in weeds.iter_mut().zip(&st.found) {
                if f && w.found_step.is_none() {
                    w.found_step = Some(st.steps);
                }
            }
        }
        path_length += action.is_move() as usize;
        reward_sum += res.reward;
        records.push(StepRecord {
            step: st.steps,
            row: st.drone.0,
            col: st.drone.1,
            action,
            reward: res.reward,
            newly_found: res.info.newly_found,
            cumulative_found: st.total_found,
            budget: env.budget(),
            done_reason: res.info.reason,
        });
        obs = res.obs;
    }

    let st = env.state();
    let end_reason = match st.done_reason {
        Some(r) => r.as_str().to_string(),
        None if stopped_by_policy => "plan_complete".to_string(),
        None => unreachable!("loop exits only when done or stopped"),
    };
    Ok(EpisodeLog {
        fingerprint: config_fingerprint(env.config()),
        seed,
        m: env.config().m(),
        fov: env.config().fov,
        start,
        weeds,
        initial_found,
        records,
        values,
        steps: st.steps,
        path_length,
        found: st.total_found,
        found_fraction: st.found_fraction(),
        reward_sum,
        end_reason,
    })
}

/// Seed of evaluation episode `i` under a master seed.
pub fn evaluation_seed(seed: u64, i: usize) -> u64 {
    RngStream::new(seed, streams::EVALUATION).value_at(i as u64)
}

/// Evaluate `n` episodes in parallel; logs come back in episode order.
pub fn run_episodes<P, F>(make_policy: F, cfg: &EnvConfig, seed: u64, n: usize) -> Result<Vec<EpisodeLog>>
where
    P: Policy,
    F: Fn() -> P + Sync,
{
    cfg.validate()?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut p = make_policy();
            run_episode(&mut p, cfg, evaluation_seed(seed, i))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_episodes: usize,
    pub fingerprint: u64,
    pub checkpoints: Vec<usize>,
    /// Found fraction at each checkpoint.
    pub at_checkpoints: Vec<Stat>,
    pub path_length: Stat,
    pub steps: Stat,
    pub found_fraction: Stat,
    pub reward: Stat,
    /// Mean found fraction after `t` steps, `t = 0..=longest episode`.
    pub curve: Vec<f64>,
    pub end_reasons: BTreeMap<String, usize>,
}

pub fn aggregate(logs: &[EpisodeLog], checkpoints: &[usize]) -> Result<EvalSummary> {
    let first = logs.first().ok_or_else(|| Error::Usage("no episode logs to aggregate".into()))?;
    if logs.iter().any(|l| l.fingerprint != first.fingerprint) {
        return Err(Error::Usage("episode logs come from different configurations".into()));
    }
    let col = |f: &dyn Fn(&EpisodeLog) -> f64| Stat::of(&logs.iter().map(f).collect::<Vec<_>>());
    let longest = logs.iter().map(|l| l.steps).max().unwrap_or(0);
    let n = logs.len() as f64;
    let curve = (0..=longest).map(|t| logs.iter().map(|l| found_fraction_at(l, t)).sum::<f64>() / n).collect();
    let mut end_reasons = BTreeMap::new();
    for l in logs {
        *end_reasons.entry(l.end_reason.clone()).or_insert(0) += 1;
    }
    Ok(EvalSummary {
        n_episodes: logs.len(),
        fingerprint: first.fingerprint,
        checkpoints: checkpoints.to_vec(),
        at_checkpoints: checkpoints.iter().map(|&t| col(&|l| found_fraction_at(l, t))).collect(),
        path_length: col(&|l| l.path_length as f64),
        steps: col(&|l| l.steps as f64),
        found_fraction: col(&|l| l.found_fraction),
        reward: col(&|l| l.reward_sum),
        curve,
        end_reasons,
    })
}

impl EvalSummary {
    /// `metric  mean  std` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tmean\tstd\n");
        let mut row = |name: String, s: &Stat| out.push_str(&format!("{name}\t{:?}\t{:?}\n", s.mean, s.std));
        for (t, s) in self.checkpoints.iter().zip(&self.at_checkpoints) {
            row(format!("found_fraction@{t}"), s);
        }
        row("found_fraction".into(), &self.found_fraction);
        row("path_length".into(), &self.path_length);
        row("steps".into(), &self.steps);
        row("reward".into(), &self.reward);
        out
    }

    /// `step  mean_found_fraction` lines for plotting.
    pub fn curve_tsv(&self) -> String {
        let mut out = String::from("step\tmean_found_fraction\n");
        for (t, v) in self.curve.iter().enumerate() {
            out.push_str(&format!("{t}\t{v:?}\n"));
        }
        out
    }
}

/// Which direction of a metric counts as better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Better {
    Higher,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub better: Better,
    pub a: Stat,
    pub b: Stat,
    pub test: WelchResult,
    /// `Some(true)` if `a` is significantly better, `Some(false)` if `b` is.
    pub winner_a: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label_a: String,
    pub label_b: String,
    pub alpha: f64,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare(
    label_a: &str,
    a: &[EpisodeLog],
    label_b: &str,
    b: &[EpisodeLog],
    checkpoints: &[usize],
    alpha: f64,
) -> Result<Comparison> {
    let fa = a.first().map(|l| (l.m, l.fov));
    let fb = b.first().map(|l| (l.m, l.fov));
    if fa.is_none() || fa != fb {
        return Err(Error::Usage(format!("incompatible field configurations: {fa:?} vs {fb:?}")));
    }
    let mut rows = Vec::new();
    let mut row = |metric: String, better: Better, f: &dyn Fn(&EpisodeLog) -> f64| -> Result<()> {
        let xa: Vec<f64> = a.iter().map(f).collect();
        let xb: Vec<f64> = b.iter().map(f).collect();
        let (sa, sb) = (Stat::of(&xa), Stat::of(&xb));
        let test = welch_t_test(&xa, &xb)?;
        let winner_a = (test.p < alpha).then(|| match better {
            Better::Higher => sa.mean > sb.mean,
            Better::Lower => sa.mean < sb.mean,
        });
        rows.push(ComparisonRow { metric, better, a: sa, b: sb, test, winner_a });
        Ok(())
    };
    for &t in checkpoints {
        row(format!("found_fraction@{t}"), Better::Higher, &|l| found_fraction_at(l, t))?;
    }
    row("found_fraction".into(), Better::Higher, &|l| l.found_fraction)?;
    row("path_length".into(), Better::Lower, &|l| l.path_length as f64)?;
    Ok(Comparison { label_a: label_a.into(), label_b: label_b.into(), alpha, rows })
}

impl Comparison {
    /// Tab-separated table; `*` marks the significantly better side.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("metric\t{}\t{}\tt\tdof\tp\n", self.label_a, self.label_b);
        for r in &self.rows {
            let star = |mine: bool| if r.winner_a == Some(mine) { "*" } else { "" };
            out.push_str(&format!(
                "{}\t{:.2}{}\t{:.2}{}\t{:.3}\t{:.1}\t{:.3e}\n",
                r.metric,
                r.a,
                star(true),
                r.b,
                star(false),
                r.test.t,
                r.test.dof,
                r.test.p
            ));
        }
        out
    }
}

/// One line of an episode log file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine {
    Episode {
        fingerprint: u64,
        seed: u64,
        m: usize,
        fov: usize,
        start: (usize, usize),
        weeds: Vec<WeedRecord>,
        initial_found: usize,
    },
    Step {
        #[serde(flatten)]
        record: StepRecord,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        values: Option<Vec<f64>>,
    },
    End {
        steps: usize,
        path_length: usize,
        found: usize,
        found_fraction: f64,
        reward_sum: f64,
        end_reason: String,
    },
}

/// Write logs as line-delimited JSON: a header, one line per step, a footer.
pub fn write_logs(path: &Path, logs: &[EpisodeLog]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut line = |l: &LogLine| -> Result<()> {
        serde_json::to_writer(&mut w, l).map_err(|e| Error::Parse(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    };
    for log in logs {
        line(&LogLine::Episode {
            fingerprint: log.fingerprint,
            seed: log.seed,
            m: log.m,
            fov: log.fov,
            start: log.start,
            weeds: log.weeds.clone(),
            initial_found: log.initial_found,
        })?;
        for (i, r) in log.records.iter().enumerate() {
            line(&LogLine::Step { record: r.clone(), values: log.values.get(i).cloned() })?;
        }
        line(&LogLine::End {
            steps: log.steps,
            path_length: log.path_length,
            found: log.found,
            found_fraction: log.found_fraction,
            reward_sum: log.reward_sum,
            end_reason: log.end_reason.clone(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_logs(path: &Path) -> Result<Vec<EpisodeLog>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut logs = Vec::new();
    let mut current: Option<EpisodeLog> = None;
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: &str| Error::Parse(format!("{}:{}: {msg}", path.display(), lineno + 1));
        let parsed: LogLine = serde_json::from_str(&line).map_err(|e| err(&e.to_string()))?;
        match parsed {
            LogLine::Episode { fingerprint, seed, m, fov, start, weeds, initial_found } => {
                if current.is_some() {
                    return Err(err("episode header before the previous episode ended"));
                }
                current = Some(EpisodeLog {
                    fingerprint,
                    seed,
                    m,
                    fov,
                    start,
                    weeds,
                    initial_found,
                    records: Vec::new(),
                    values: Vec::new(),
                    steps: 0,
                    path_length: 0,
                    found: initial_found,
                    found_fraction: 0.0,
                    reward_sum: 0.0,
                    end_reason: String::new(),
                });
            }
            LogLine::Step { record, values } => {
                let log = current.as_mut().ok_or_else(|| err("step outside an episode"))?;
                if let Some(v) = values {
                    log.values.push(v);
                }
                log.records.push(record);
            }
            LogLine::End { steps, path_length, found, found_fraction, reward_sum, end_reason } => {
                let mut log = current.take().ok_or_else(|| err("episode footer without header"))?;
                log.steps = steps;
                log.path_length = path_length;
                log.found = found;
                log.found_fraction = found_fraction;
                log.reward_sum = reward_sum;
                log.end_reason = end_reason;
                logs.push(log);
            }
        }
    }
    if current.is_some() {
        return Err(Error::Parse(format!("{}: last episode has no footer", path.display())));
    }
    Ok(logs)
}

/// Softmax probability of the land action paired with the found fraction
/// at that step, for every step of every episode that recorded values.
pub fn land_value_pairs(logs: &[EpisodeLog], lambda: f64) -> Vec<(f64, f64)> {
    let land = Action::Land.index();
    let mut out = Vec::new();
    for log in logs {
        for (i, v) in log.values.iter().enumerate() {
            if v.len() <= land {
                continue;
            }
            // value seen before step i + 1, i.e. after i steps
            let p = softmax_probs(v, lambda)[land];
            out.push((p, found_fraction_at(log, i)));
        }
    }
    out
}
