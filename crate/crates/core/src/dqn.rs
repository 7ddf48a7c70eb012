//! Deep Q-learning: replay memory, exploration, TD targets and the
//! actor/learner training loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Env, Observation};
use crate::error::{Error, Result};
use crate::nn::{adam_step, smooth_l1, AdamState, ForwardCache, NetInput, NetworkParams, QNetwork, Real};
use crate::rng::{streams, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: Action,
    pub reward: f32,
    pub next_state: Observation,
    pub terminal: bool,
}

/// Fixed-capacity circular store of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Parameter("replay capacity must be positive".into()));
        }
        Ok(Self { capacity, items: Vec::new(), cursor: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Stored transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        // while filling, cursor == len and the first slice is empty
        self.items[self.cursor.min(self.items.len())..].iter().chain(self.items[..self.cursor.min(self.items.len())].iter())
    }

    /// `n` distinct transitions drawn uniformly.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Result<Vec<&Transition>> {
        if n > self.items.len() {
            return Err(Error::Usage(format!("cannot sample {n} transitions from a buffer holding {}", self.items.len())));
        }
        Ok(rng.sample_distinct(self.items.len(), n).into_iter().map(|i| &self.items[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub tau: f64,
    /// Softmax exploration temperature.
    pub lambda: f64,
    /// Adam learning rate.
    pub alpha: f64,
    pub n_batch: usize,
    /// Environment transitions collected over the whole run.
    pub n_steps: u64,
    pub n_buffer: usize,
    pub n_val: usize,
    /// Buffer fill fraction required before the first gradient step.
    pub learning_starts: f64,
    /// Gradient steps between validations.
    pub val_interval: u64,
    pub n_envs: usize,
    /// Vectorised environment steps per gradient step.
    pub train_freq: u64,
    /// Global gradient-norm clip; 0 disables.
    pub max_grad_norm: f64,
    pub huber_beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            tau: 0.005,
            lambda: 0.1,
            alpha: 3e-5,
            n_batch: 128,
            n_steps: 10_000_000,
            n_buffer: 50_000,
            n_val: 120,
            learning_starts: 0.5,
            val_interval: 50_000,
            n_envs: 12,
            train_freq: 4,
            max_grad_norm: 10.0,
            huber_beta: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Parameter(format!("train.{name} must be in [0, 1], got {v}")))
            }
        };
        unit("gamma", self.gamma)?;
        unit("tau", self.tau)?;
        unit("learning_starts", self.learning_starts)?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Parameter(format!("train.{name} must be positive, got {v}")))
            }
        };
        positive("lambda", self.lambda)?;
        positive("alpha", self.alpha)?;
        positive("huber_beta", self.huber_beta)?;
        if !(self.max_grad_norm >= 0.0) {
            return Err(Error::Parameter(format!("train.max_grad_norm must be >= 0, got {}", self.max_grad_norm)));
        }
        for (name, v) in [
            ("n_batch", self.n_batch as u64),
            ("n_buffer", self.n_buffer as u64),
            ("n_val", self.n_val as u64),
            ("val_interval", self.val_interval),
            ("n_envs", self.n_envs as u64),
            ("train_freq", self.train_freq),
        ] {
            if v == 0 {
                return Err(Error::Parameter(format!("train.{name} must be at least 1")));
            }
        }
        if self.n_batch > self.n_buffer {
            return Err(Error::Parameter(format!(
                "train.n_batch ({}) exceeds train.n_buffer ({})",
                self.n_batch, self.n_buffer
            )));
        }
        Ok(())
    }

    /// Transitions stored before learning begins.
    pub fn min_fill(&self) -> usize {
        ((self.learning_starts * self.n_buffer as f64).ceil() as usize).clamp(self.n_batch, self.n_buffer)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn greedy_action<T: PartialOrd + Copy>(q: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate().skip(1) {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

/// `exp(q / lambda)` normalised, computed after subtracting the maximum.
pub fn softmax_probs(q: &[f64], lambda: f64) -> Vec<f64> {
    let max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = q.iter().map(|v| ((v - max) / lambda).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub fn softmax_action(q: &[f64], lambda: f64, rng: &mut RngStream) -> usize {
    let p = softmax_probs(q, lambda);
    let u = rng.next_uniform();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the final partial sum
    p.iter().rposition(|&v| v > 0.0).unwrap_or(0)
}

/// Bootstrapped target; terminal transitions carry no future value.
pub fn td_target(reward: f64, next_q: &[f64], gamma: f64, terminal: bool) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * next_q.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `target <- (1 - tau) target + tau policy`.
pub fn soft_update<T: Real>(target: &mut NetworkParams<T>, policy: &NetworkParams<T>, tau: f64) -> Result<()> {
    if target.len() != policy.len() {
        return Err(Error::Structural(format!(
            "soft update between {} and {} parameters",
            target.len(),
            policy.len()
        )));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Parameter(format!("tau must be in [0, 1], got {tau}")));
    }
    let keep = T::from(1.0 - tau).expect("finite");
    let take = T::from(tau).expect("finite");
    for (t, &p) in target.values.iter_mut().zip(&policy.values) {
        *t = keep * *t + take * p;
    }
    Ok(())
}

/// Policy and target parameters with the optimiser state.
#[derive(Debug, Clone)]
pub struct Learner {
    net: QNetwork,
    pub policy: NetworkParams<f32>,
    pub target: NetworkParams<f32>,
    pub adam: AdamState<f32>,
    cache: ForwardCache<f32>,
    target_cache: ForwardCache<f32>,
    grads: Vec<f32>,
}

impl Learner {
    pub fn new(net: QNetwork, params: NetworkParams<f32>, alpha: f64) -> Result<Self> {
        if params.len() != net.param_count() {
            return Err(Error::Structural(format!(
                "network has {} parameters, got {}",
                net.param_count(),
                params.len()
            )));
        }
        let n = params.len();
        Ok(Self {
            net,
            target: params.clone(),
            policy: params,
            adam: AdamState::new(n, alpha),
            cache: ForwardCache::default(),
            target_cache: ForwardCache::default(),
            grads: vec![0.0; n],
        })
    }

    pub fn network(&self) -> &QNetwork {
        &self.net
    }

    /// One minibatch update. Returns the mean smooth-L1 loss of the batch.
    pub fn train_step(&mut self, buffer: &ReplayBuffer, cfg: &TrainConfig, rng: &mut RngStream) -> Result<f64> {
        if buffer.len() < cfg.n_batch {
            return Err(Error::Usage(format!(
                "buffer holds {} transitions, batch needs {}",
                buffer.len(),
                cfg.n_batch
            )));
        }
        let batch = buffer.sample(cfg.n_batch, rng)?;
        let next: Vec<NetInput> = batch.iter().map(|t| t.next_state.net_input()).collect();
        let next_q = self.net.forward_batch(&self.target, &next, &mut self.target_cache)?;
        let inputs: Vec<NetInput> = batch.iter().map(|t| t.state.net_input()).collect();
        let q = self.net.forward_batch(&self.policy, &inputs, &mut self.cache)?;

        let n = batch.len() as f64;
        let n_out = self.net.n_outputs();
        let mut loss = 0.0;
        let mut upstream = vec![vec![0.0f32; n_out]; batch.len()];
        for (i, t) in batch.iter().enumerate() {
            let a = t.action.index();
            if a >= n_out {
                return Err(Error::Structural(format!("action {} outside a {n_out}-action network", t.action)));
            }
            let nq: Vec<f64> = next_q[i].iter().map(|&v| v as f64).collect();
            let y = td_target(t.reward as f64, &nq, cfg.gamma, t.terminal);
            let (l, g) = smooth_l1(q[i][a] as f64, y, cfg.huber_beta);
            loss += l;
            upstream[i][a] = (g / n) as f32;
        }

        self.grads.iter_mut().for_each(|g| *g = 0.0);
        self.net.backward(&self.policy, &self.cache, &upstream, &mut self.grads)?;
        if cfg.max_grad_norm > 0.0 {
            let norm = self.grads.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
            if norm > cfg.max_grad_norm {
                let s = (cfg.max_grad_norm / norm) as f32;
                self.grads.iter_mut().for_each(|g| *g *= s);
            }
        }
        adam_step(&mut self.policy, &self.grads, &mut self.adam)?;
        soft_update(&mut self.target, &self.policy, cfg.tau)?;
        Ok(loss / n)
    }
}

/// Builds a fresh episode from a seed.
pub type EnvFactory<'a> = dyn Fn(u64) -> Result<(Env, Observation)> + Sync + 'a;

const MAX_RESET_ATTEMPTS: usize = 1000;

/// Draw episode seeds until one does not terminate at reset.
fn fresh_episode(factory: &EnvFactory<'_>, seeds: &mut RngStream) -> Result<(Env, Observation)> {
    for _ in 0..MAX_RESET_ATTEMPTS {
        let (env, obs) = factory(seeds.next_u64())?;
        if !env.state().done() {
            return Ok((env, obs));
        }
    }
    Err(Error::Config(format!("{MAX_RESET_ATTEMPTS} consecutive episodes ended at reset")))
}

/// Run the greedy policy until the episode ends. Returns the reward sum.
pub fn greedy_rollout<T: Real>(net: &QNetwork, params: &NetworkParams<T>, env: &mut Env, mut obs: Observation) -> Result<f64> {
    let mut total = 0.0;
    while !env.state().done() {
        let q = net.forward(params, &obs.net_input())?;
        let a = Action::from_index(greedy_action(&q))
            .ok_or_else(|| Error::Structural(format!("network has {} outputs", q.len())))?;
        let step = env.step(a)?;
        total += step.reward;
        obs = step.obs;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationStats {
    pub mean_reward: f64,
    pub mean_found_fraction: f64,
}

/// Greedy episodes on fixed seeds, run in parallel and reduced in seed order.
pub fn validate<T: Real>(net: &QNetwork, params: &NetworkParams<T>, factory: &EnvFactory<'_>, seeds: &[u64]) -> Result<ValidationStats> {
    let results = seeds
        .par_iter()
        .map(|&s| {
            let (mut env, obs) = factory(s)?;
            let r = greedy_rollout(net, params, &mut env, obs)?;
            Ok((r, env.state().found_fraction()))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = results.len().max(1) as f64;
    Ok(ValidationStats {
        mean_reward: results.iter().map(|r| r.0).sum::<f64>() / n,
        mean_found_fraction: results.iter().map(|r| r.1).sum::<f64>() / n,
    })
}

/// Seeds of the fixed validation set.
pub fn validation_seeds(seed: u64, n: usize) -> Vec<u64> {
    let s = RngStream::new(seed, streams::VALIDATION);
    (0..n as u64).map(|i| s.value_at(i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub env_steps: u64,
    pub train_steps: u64,
    /// Mean training loss since the previous record.
    pub loss: f64,
    pub val_mean_reward: f64,
    pub val_mean_found_fraction: f64,
}

impl HistoryRecord {
    pub const TSV_HEADER: &'static str = "env_steps\ttrain_steps\tloss\tval_mean_reward\tval_mean_found_fraction";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{:?}\t{:?}\t{:?}",
            self.env_steps, self.train_steps, self.loss, self.val_mean_reward, self.val_mean_found_fraction
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the highest validation mean reward, or the final
    /// parameters when no validation ran.
    pub best: NetworkParams<f32>,
    pub best_record: Option<HistoryRecord>,
    pub final_params: NetworkParams<f32>,
    pub history: Vec<HistoryRecord>,
    pub env_steps: u64,
    pub train_steps: u64,
    pub episodes: u64,
}

struct Actor {
    env: Env,
    obs: Observation,
    explore: RngStream,
    seeds: RngStream,
}

impl Actor {
    fn act(&mut self, net: &QNetwork, policy: &NetworkParams<f32>, lambda: f64, factory: &EnvFactory<'_>) -> Result<(Transition, bool)> {
        let q: Vec<f64> = net.forward(policy, &self.obs.net_input())?.into_iter().map(f64::from).collect();
        let a = softmax_action(&q, lambda, &mut self.explore);
        let action = Action::from_index(a).ok_or_else(|| Error::Structural(format!("network has {} outputs", q.len())))?;
        let step = self.env.step(action)?;
        let state = std::mem::replace(&mut self.obs, step.obs.clone());
        let t = Transition { state, action, reward: step.reward as f32, next_state: step.obs, terminal: step.done };
        if step.done {
            let (env, obs) = fresh_episode(factory, &mut self.seeds)?;
            self.env = env;
            self.obs = obs;
        }
        Ok((t, step.done))
    }
}

/// Train a Q-network from scratch.
///
/// Each vectorised step lets every actor pick a softmax action with the
/// current policy snapshot. Once the buffer holds [`TrainConfig::min_fill`]
/// transitions a gradient step follows every `train_freq` vectorised steps.
/// Actors run in parallel but reduce in a fixed order, so results depend
/// only on `seed`, not on the thread count.
pub fn training_loop(
    net: &QNetwork,
    factory: &EnvFactory<'_>,
    cfg: &TrainConfig,
    seed: u64,
    on_record: &mut dyn FnMut(&HistoryRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let init: NetworkParams<f32> = net.init_params(&mut RngStream::new(seed, streams::INIT));
    let mut learner = Learner::new(net.clone(), init, cfg.alpha)?;
    let mut outcome = TrainOutcome {
        best: learner.policy.clone(),
        best_record: None,
        final_params: learner.policy.clone(),
        history: Vec::new(),
        env_steps: 0,
        train_steps: 0,
        episodes: 0,
    };
    if cfg.n_steps == 0 {
        return Ok(outcome);
    }

    let mut actors = (0..cfg.n_envs)
        .map(|i| {
            let mut seeds = RngStream::new(seed, streams::worker(streams::TRAIN_EPISODES, i));
            let (env, obs) = fresh_episode(factory, &mut seeds)?;
            Ok(Actor { env, obs, explore: RngStream::new(seed, streams::worker(streams::EXPLORATION, i)), seeds })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut buffer = ReplayBuffer::new(cfg.n_buffer)?;
    let mut minibatch = RngStream::new(seed, streams::MINIBATCH);
    let val_seeds = validation_seeds(seed, cfg.n_val);
    let min_fill = cfg.min_fill();

    let mut vector_steps = 0u64;
    let mut loss_sum = 0.0;
    let mut loss_n = 0u64;
    let mut last_validated = 0u64;

    let mut record = |learner: &Learner, outcome: &mut TrainOutcome, loss: f64| -> Result<()> {
        let stats = validate(net, &learner.policy, factory, &val_seeds)?;
        let rec = HistoryRecord {
            env_steps: outcome.env_steps,
            train_steps: outcome.train_steps,
            loss,
            val_mean_reward: stats.mean_reward,
            val_mean_found_fraction: stats.mean_found_fraction,
        };
        if outcome.best_record.is_none_or(|b| rec.val_mean_reward > b.val_mean_reward) {
            outcome.best = learner.policy.clone();
            outcome.best_record = Some(rec);
        }
        outcome.history.push(rec);
        on_record(&rec);
        Ok(())
    };

    while outcome.env_steps < cfg.n_steps {
        let active = ((cfg.n_steps - outcome.env_steps) as usize).min(actors.len());
        let policy = &learner.policy;
        let steps = actors[..active]
            .par_iter_mut()
            .map(|a| a.act(net, policy, cfg.lambda, factory))
            .collect::<Result<Vec<_>>>()?;
        for (t, done) in steps {
            buffer.push(t);
            outcome.episodes += done as u64;
        }
        outcome.env_steps += active as u64;
        vector_steps += 1;

        if buffer.len() >= min_fill && vector_steps % cfg.train_freq == 0 {
            loss_sum += learner.train_step(&buffer, cfg, &mut minibatch)?;
            loss_n += 1;
            outcome.train_steps += 1;
            if outcome.train_steps % cfg.val_interval == 0 {
                record(&learner, &mut outcome, loss_sum / loss_n as f64)?;
                (loss_sum, loss_n) = (0.0, 0);
                last_validated = outcome.train_steps;
            }
        }
    }
    if outcome.train_steps > last_validated {
        record(&learner, &mut outcome, loss_sum / loss_n as f64)?;
    }
    if outcome.best_record.is_none() {
        outcome.best = learner.policy.clone();
    }
    outcome.final_params = learner.policy;
    Ok(outcome)
}
