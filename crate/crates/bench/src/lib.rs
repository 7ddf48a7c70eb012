//! Fixtures shared by the benchmarks.

use uav_search::config::{parse_config, ExperimentConfig};
use uav_search::dqn::{ReplayBuffer, Transition};
use uav_search::env::{Action, Env};
use uav_search::rng::RngStream;

pub fn config(presets: &[&str]) -> ExperimentConfig {
    let names: Vec<String> = presets.iter().map(|s| s.to_string()).collect();
    parse_config(&names, None, &[]).expect("known presets")
}

/// Replay buffer filled by a random walk.
pub fn filled_buffer(cfg: &ExperimentConfig, n: usize) -> ReplayBuffer {
    let mut buf = ReplayBuffer::new(n).expect("capacity > 0");
    let mut rng = RngStream::new(1, 0);
    let mut episode = 0;
    let (mut env, mut obs) = Env::reset(&cfg.env, episode).expect("valid config");
    while buf.len() < n {
        let action = Action::MOVES[rng.next_below(4)];
        let res = env.step(action).expect("episode running");
        buf.push(Transition { state: obs, action, reward: res.reward as f32, next_state: res.obs.clone(), terminal: res.done });
        obs = res.obs;
        if res.done {
            episode += 1;
            (env, obs) = Env::reset(&cfg.env, episode).expect("valid config");
        }
    }
    buf
}
